#pragma once

// Umbrella header for the CFT-CLIP library: counterfactual-text hard-negative
// generation, contrastive bi-encoder training, and zero-shot image-text
// representativeness assessment with a deterministic toy backend.

#include "cftclip/assess.hpp"
#include "cftclip/cfgen.hpp"
#include "cftclip/corpus.hpp"
#include "cftclip/encoders.hpp"
#include "cftclip/errors.hpp"
#include "cftclip/image.hpp"
#include "cftclip/io.hpp"
#include "cftclip/pipeline.hpp"
#include "cftclip/rng.hpp"
#include "cftclip/synth.hpp"
#include "cftclip/text_models.hpp"
#include "cftclip/tokenize.hpp"
#include "cftclip/training.hpp"
#include "cftclip/types.hpp"
