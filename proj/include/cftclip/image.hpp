#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cftclip/errors.hpp"

namespace cftclip {

// Decoded raster, row-major, interleaved channels, values in [0, 1].
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> pixels;

    double at(int y, int x, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double& at(int y, int x, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool empty() const { return pixels.empty(); }
};

inline Raster make_raster(int width, int height, int channels = 1, double fill = 0.0) {
    Raster r;
    r.width = width;
    r.height = height;
    r.channels = channels;
    r.pixels.assign(static_cast<std::size_t>(width) * height * channels, fill);
    return r;
}

namespace detail {
inline int next_pnm_int(std::istream& in) {
    // Skips whitespace and '#' comment lines between header fields.
    for (;;) {
        int c = in.peek();
        if (c == EOF) raise(ErrorCode::DecodeError, "truncated PNM header");
        if (std::isspace(c)) {
            in.get();
        } else if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value)) raise(ErrorCode::DecodeError, "bad PNM header field");
    return value;
}
} // namespace detail

// Binary PGM (P5) / PPM (P6) decoding, maxval <= 255.
inline Raster load_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open image: " + path);
    std::string magic;
    in >> magic;
    int channels = 0;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else raise(ErrorCode::DecodeError, "unsupported image magic '" + magic + "' in " + path);

    int width = detail::next_pnm_int(in);
    int height = detail::next_pnm_int(in);
    int maxval = detail::next_pnm_int(in);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
        raise(ErrorCode::DecodeError, "bad PNM dimensions in " + path);
    in.get(); // single whitespace byte after maxval

    std::size_t count = static_cast<std::size_t>(width) * height * channels;
    std::vector<unsigned char> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count)
        raise(ErrorCode::DecodeError, "truncated pixel data in " + path);

    Raster r = make_raster(width, height, channels);
    for (std::size_t i = 0; i < count; ++i) r.pixels[i] = raw[i] / static_cast<double>(maxval);
    return r;
}

inline void save_pnm(const Raster& raster, const std::string& path) {
    if (raster.channels != 1 && raster.channels != 3)
        raise(ErrorCode::PreprocessError, "save_pnm supports 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write image: " + path);
    out << (raster.channels == 1 ? "P5" : "P6") << "\n"
        << raster.width << " " << raster.height << "\n255\n";
    for (double v : raster.pixels) {
        double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        out.put(static_cast<char>(static_cast<int>(clamped * 255.0 + 0.5)));
    }
    if (!out) raise(ErrorCode::IoError, "short write for image: " + path);
}

} // namespace cftclip
