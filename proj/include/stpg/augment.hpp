#pragma once

#include <vector>

#include "stpg/rng.hpp"
#include "stpg/types.hpp"

namespace stpg {

// Weak augmentation: horizontal flip (p=0.5) + random crop-with-pad back to
// the original size. Strong augmentation: weak + CutMix rectangles pasted
// from a mix source + Gaussian feature jitter.

struct Rect {
    int x = 0, y = 0, w = 0, h = 0;
    int source_index = -1;  // batch-local index of the mix source
};

struct AugRecord {
    bool flip = false;
    int off_x = 0, off_y = 0;  // translation after flip, in [-pad, pad]
    std::vector<Rect> rects;
};

struct WeakParams {
    double flip_prob = 0.5;
    int pad = 4;
};

struct StrongParams {
    WeakParams weak;
    int rect_count = 3;
    double area_ratio_min = 0.25;
    double area_ratio_max = 0.5;
    double aspect_min = 0.5;
    double aspect_max = 2.0;
    double jitter_std = 0.05;  // relative to the image RMS feature scale
};

std::pair<Image, AugRecord> weak_augment(const Image& img, const WeakParams& params, Rng& rng);

// Replays the flip/crop part of a record. Padded-in pixels are 0 for
// features and kIgnoreLabel for labels.
Image apply_weak(const Image& img, const AugRecord& rec);
LabelMap apply_weak(const LabelMap& labels, const AugRecord& rec);

// Rectangles with per-rectangle area ratio in [area_ratio_min, area_ratio_max]
// and aspect ratio in [aspect_min, aspect_max], fully inside a WxH image.
// Throws std::runtime_error when a rectangle cannot be placed in 100 tries.
std::vector<Rect> sample_cutmix_rects(int width, int height, const StrongParams& params, Rng& rng);

// Paste the rect regions of `source` into a copy of `base`. All overloads
// replay the same geometry so pseudo-label targets can be composed from
// teacher predictions of the un-mixed views.
Image paste_rects(const Image& base, const Image& source, const std::vector<Rect>& rects);
ProbabilityMap paste_rects(const ProbabilityMap& base, const ProbabilityMap& source,
                           const std::vector<Rect>& rects);
LabelMap paste_rects(const LabelMap& base, const LabelMap& source, const std::vector<Rect>& rects);

// Additive Gaussian noise, std = jitter_std * rms(img).
Image feature_jitter(const Image& img, double jitter_std, Rng& rng);

// Weak view of img with rect_count rectangles pasted from the identically
// weak-augmented mix source, plus jitter. The record holds the shared weak
// geometry and the rectangles.
std::pair<Image, AugRecord> strong_augment(const Image& img, const Image& mix_source,
                                           const StrongParams& params, Rng& rng);

}  // namespace stpg
