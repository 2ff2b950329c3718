#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stpg/rng.hpp"
#include "stpg/tensor.hpp"
#include "stpg/types.hpp"

namespace stpg {

// Synthetic long-tail segmentation dataset: images are unions of random
// axis-aligned ellipse blobs over a class-0 background, pixel features are
// per-class signature vectors plus Gaussian noise.
struct DatasetSpec {
    int num_classes = 6;
    int width = 64;
    int height = 64;
    int channels = 8;
    std::vector<double> class_freq;  // positive, sums to 1
    double snr = 8.0;                // signal energy / expected noise energy
    int n_labeled = 4;
    int n_unlabeled = 40;
    int n_val = 8;
    uint64_t seed = 1;

    // Throws std::invalid_argument listing every violated constraint.
    void validate() const;
};

struct LabeledItem {
    Image image;
    LabelMap label;
};

// Carries no label field: the training path cannot read ground truth of
// unlabeled images by construction.
struct UnlabeledItem {
    Image image;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<LabeledItem> labeled;
    std::vector<UnlabeledItem> unlabeled;
    std::vector<LabeledItem> validation;

    // Ground truth of the unlabeled split, kept for post-hoc diagnostics
    // only; nothing in the training loop touches it.
    std::vector<LabelMap> unlabeled_truth;

    // Per-class signature vectors [C,F], exposed for tests and diagnostics.
    Tensor signatures;
};

Dataset generate_dataset(const DatasetSpec& spec);

// Label map of a single generated image; lets tests and oracles count class
// pixels without materializing features.
LabelMap generate_label_map(const DatasetSpec& spec, Rng& rng);

struct Batch {
    std::vector<int> labeled_idx;
    std::vector<int> unlabeled_idx;
};

// Shuffled cycling over both splits: every item appears once per epoch, the
// order reshuffles each epoch, labeled and unlabeled counts per batch are
// equal.
class BatchSampler {
public:
    BatchSampler(int n_labeled, int n_unlabeled, Rng rng);

    Batch next(int batch_size);

    // Checkpoint state.
    struct State {
        uint64_t rng_state;
        std::vector<int> labeled_order, unlabeled_order;
        int labeled_cursor, unlabeled_cursor;
    };
    State state() const;
    void restore(const State& s);

private:
    int draw(std::vector<int>& order, int& cursor);

    Rng rng_;
    std::vector<int> labeled_order_, unlabeled_order_;
    int labeled_cursor_ = 0, unlabeled_cursor_ = 0;
};

// Dataset directory layout: manifest.json plus one container file per
// image/label. Used by `stpg-lab gen-data` and `stpg-lab eval`.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace stpg
