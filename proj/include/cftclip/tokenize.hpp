#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cftclip {

// One generator token with its byte span in the source text.
struct Token {
    std::string surface;
    std::size_t begin = 0; // byte offset, inclusive
    std::size_t end = 0;   // byte offset, exclusive
};

inline bool is_word_byte(unsigned char c) {
    // Letters, digits, and any non-ASCII byte (keeps UTF-8 names like "Müller" whole).
    return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
           c == '_' || c >= 0x80;
}

// Generator tokenization: maximal word-byte runs, every other non-space byte
// is a single-character token. Offsets always index the original bytes.
inline std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            ++i;
            continue;
        }
        std::size_t begin = i;
        if (is_word_byte(c)) {
            while (i < n && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        } else {
            ++i;
        }
        tokens.push_back({std::string(text.substr(begin, i - begin)), begin, i});
    }
    return tokens;
}

// Rebuilds the text with `replacements[i]` substituted for token `positions[i]`.
// Bytes outside the replaced token spans are copied verbatim.
inline std::string splice_tokens(std::string_view original,
                                 const std::vector<Token>& tokens,
                                 const std::vector<std::size_t>& positions,
                                 const std::vector<std::string>& replacements) {
    std::string out;
    out.reserve(original.size() + 16);
    std::size_t cursor = 0;
    // positions are sorted ascending by construction of a MaskPlan
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const Token& tok = tokens[positions[k]];
        out.append(original.substr(cursor, tok.begin - cursor));
        out.append(replacements[k]);
        cursor = tok.end;
    }
    out.append(original.substr(cursor));
    return out;
}

} // namespace cftclip
