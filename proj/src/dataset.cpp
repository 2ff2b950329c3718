#include "stpg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "stpg/io.hpp"

namespace fs = std::filesystem;

namespace stpg {
namespace {

// Enough stamps that the background leak stays near 1% and per-image class
// shares concentrate around the spec frequencies.
constexpr int kBlobsPerImage = 112;

// Stream tags for per-purpose substreams of the dataset seed.
enum : uint64_t {
    kTagSignatures = 1,
    kTagLabeled = 2,
    kTagUnlabeled = 3,
    kTagValidation = 4,
};

int sample_class(const std::vector<double>& freq, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (size_t c = 0; c < freq.size(); ++c) {
        acc += freq[c];
        if (u < acc) return static_cast<int>(c);
    }
    return static_cast<int>(freq.size()) - 1;
}

void stamp_blobs(LabelMap& labels, const DatasetSpec& spec, Rng& rng) {
    const int w = spec.width, h = spec.height;
    for (int b = 0; b < kBlobsPerImage; ++b) {
        int cls = sample_class(spec.class_freq, rng);
        double cx = rng.uniform(0.0, w);
        double cy = rng.uniform(0.0, h);
        double ax = rng.uniform(w / 12.0, w / 5.0);
        double ay = rng.uniform(h / 12.0, h / 5.0);
        int x0 = std::max(0, static_cast<int>(std::floor(cx - ax)));
        int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + ax)));
        int y0 = std::max(0, static_cast<int>(std::floor(cy - ay)));
        int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + ay)));
        for (int x = x0; x <= x1; ++x) {
            double dx = (x + 0.5 - cx) / ax;
            for (int y = y0; y <= y1; ++y) {
                double dy = (y + 0.5 - cy) / ay;
                if (dx * dx + dy * dy <= 1.0) labels.at(x, y) = static_cast<uint8_t>(cls);
            }
        }
    }
}

Image render_image(const LabelMap& labels, const Tensor& signatures, double noise_std, Rng& rng,
                   std::string id) {
    const int w = labels.width, h = labels.height, f = signatures.dim(1);
    Image img{Tensor({w, h, f}), std::move(id)};
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y) {
            int cls = labels.at(x, y);
            for (int k = 0; k < f; ++k)
                img.data.at(x, y, k) = signatures.at(cls, k) +
                                       static_cast<float>(noise_std * rng.normal());
        }
    return img;
}

Tensor draw_signatures(int num_classes, int channels, Rng& rng) {
    Tensor sig({num_classes, channels});
    for (int c = 0; c < num_classes; ++c) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            std::vector<double> v(static_cast<size_t>(channels));
            double norm = 0.0;
            for (auto& x : v) {
                x = rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (auto& x : v) x /= norm;
            // Reject near-duplicates so every class stays separable.
            bool ok = true;
            for (int prev = 0; prev < c && ok; ++prev) {
                double cos = 0.0;
                for (int k = 0; k < channels; ++k) cos += v[static_cast<size_t>(k)] * sig.at(prev, k);
                if (std::fabs(cos) > 0.8) ok = false;
            }
            if (ok || attempt == 99) {
                for (int k = 0; k < channels; ++k)
                    sig.at(c, k) = static_cast<float>(v[static_cast<size_t>(k)]);
                break;
            }
        }
    }
    return sig;
}

}  // namespace

void DatasetSpec::validate() const {
    std::string errors;
    auto fail = [&](const std::string& msg) { errors += (errors.empty() ? "" : "; ") + msg; };
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (num_classes > 254) fail("num_classes must fit below the ignore label");
    if (width < 1 || height < 1 || channels < 1) fail("width, height, channels must be >= 1");
    if (static_cast<int>(class_freq.size()) != num_classes)
        fail("class_freq must have num_classes entries");
    double sum = 0.0;
    for (double f : class_freq) {
        if (f <= 0.0) fail("class_freq entries must be positive (every class must appear)");
        sum += f;
    }
    if (!class_freq.empty() && std::fabs(sum - 1.0) > 1e-9) fail("class_freq must sum to 1");
    if (snr <= 0.0) fail("snr must be positive");
    if (n_labeled < 1) fail("n_labeled must be >= 1");
    if (n_unlabeled < 1) fail("n_unlabeled must be >= 1");
    if (n_val < 1) fail("n_val must be >= 1");
    if (!errors.empty()) throw std::invalid_argument("DatasetSpec: " + errors);
}

LabelMap generate_label_map(const DatasetSpec& spec, Rng& rng) {
    LabelMap labels(spec.width, spec.height, 0);
    stamp_blobs(labels, spec, rng);
    return labels;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;

    Rng master(spec.seed);
    Rng sig_rng = master.derive(kTagSignatures);
    ds.signatures = draw_signatures(spec.num_classes, spec.channels, sig_rng);

    const double noise_std = 1.0 / std::sqrt(spec.snr * spec.channels);

    auto make_item = [&](uint64_t split_tag, int index, const std::string& prefix) {
        Rng rng = master.derive(split_tag).derive(static_cast<uint64_t>(index));
        LabelMap labels = generate_label_map(spec, rng);
        Image img = render_image(labels, ds.signatures, noise_std, rng,
                                 prefix + "_" + std::to_string(index));
        return LabeledItem{std::move(img), std::move(labels)};
    };

    for (int i = 0; i < spec.n_labeled; ++i)
        ds.labeled.push_back(make_item(kTagLabeled, i, "labeled"));
    for (int i = 0; i < spec.n_unlabeled; ++i) {
        LabeledItem item = make_item(kTagUnlabeled, i, "unlabeled");
        ds.unlabeled.push_back(UnlabeledItem{std::move(item.image)});
        ds.unlabeled_truth.push_back(std::move(item.label));
    }
    for (int i = 0; i < spec.n_val; ++i)
        ds.validation.push_back(make_item(kTagValidation, i, "val"));
    return ds;
}

BatchSampler::BatchSampler(int n_labeled, int n_unlabeled, Rng rng) : rng_(rng) {
    if (n_labeled < 1 || n_unlabeled < 1)
        throw std::invalid_argument("BatchSampler: both splits must be non-empty");
    labeled_order_.resize(static_cast<size_t>(n_labeled));
    unlabeled_order_.resize(static_cast<size_t>(n_unlabeled));
    std::iota(labeled_order_.begin(), labeled_order_.end(), 0);
    std::iota(unlabeled_order_.begin(), unlabeled_order_.end(), 0);
    rng_.shuffle(labeled_order_);
    rng_.shuffle(unlabeled_order_);
}

int BatchSampler::draw(std::vector<int>& order, int& cursor) {
    if (cursor >= static_cast<int>(order.size())) {
        rng_.shuffle(order);
        cursor = 0;
    }
    return order[static_cast<size_t>(cursor++)];
}

Batch BatchSampler::next(int batch_size) {
    Batch b;
    for (int i = 0; i < batch_size; ++i) b.labeled_idx.push_back(draw(labeled_order_, labeled_cursor_));
    for (int i = 0; i < batch_size; ++i)
        b.unlabeled_idx.push_back(draw(unlabeled_order_, unlabeled_cursor_));
    return b;
}

BatchSampler::State BatchSampler::state() const {
    return {rng_.state(), labeled_order_, unlabeled_order_, labeled_cursor_, unlabeled_cursor_};
}

void BatchSampler::restore(const State& s) {
    rng_.set_state(s.rng_state);
    labeled_order_ = s.labeled_order;
    unlabeled_order_ = s.unlabeled_order;
    labeled_cursor_ = s.labeled_cursor;
    unlabeled_cursor_ = s.unlabeled_cursor;
}

namespace {

nlohmann::json spec_to_json(const DatasetSpec& s) {
    return {{"num_classes", s.num_classes}, {"width", s.width},
            {"height", s.height},           {"channels", s.channels},
            {"class_freq", s.class_freq},   {"snr", s.snr},
            {"n_labeled", s.n_labeled},     {"n_unlabeled", s.n_unlabeled},
            {"n_val", s.n_val},             {"seed", s.seed}};
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
    DatasetSpec s;
    s.num_classes = j.at("num_classes").get<int>();
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.channels = j.at("channels").get<int>();
    s.class_freq = j.at("class_freq").get<std::vector<double>>();
    s.snr = j.at("snr").get<double>();
    s.n_labeled = j.at("n_labeled").get<int>();
    s.n_unlabeled = j.at("n_unlabeled").get<int>();
    s.n_val = j.value("n_val", 8);
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["spec"] = spec_to_json(ds.spec);

    auto img_name = [](const std::string& split, int i) { return split + "_" + std::to_string(i) + ".stpg"; };
    auto lbl_name = [](const std::string& split, int i) {
        return split + "_" + std::to_string(i) + "_label.stpg";
    };

    nlohmann::json labeled = nlohmann::json::array();
    for (size_t i = 0; i < ds.labeled.size(); ++i) {
        std::string im = img_name("labeled", static_cast<int>(i)), lb = lbl_name("labeled", static_cast<int>(i));
        write_tensor(dir + "/" + im, ds.labeled[i].image.data);
        write_label_map(dir + "/" + lb, ds.labeled[i].label);
        labeled.push_back({{"image", im}, {"label", lb}, {"id", ds.labeled[i].image.id}});
    }
    manifest["labeled"] = labeled;

    nlohmann::json unlabeled = nlohmann::json::array();
    for (size_t i = 0; i < ds.unlabeled.size(); ++i) {
        std::string im = img_name("unlabeled", static_cast<int>(i));
        write_tensor(dir + "/" + im, ds.unlabeled[i].image.data);
        nlohmann::json entry = {{"image", im}, {"id", ds.unlabeled[i].image.id}};
        if (i < ds.unlabeled_truth.size()) {
            std::string lb = lbl_name("diag_unlabeled", static_cast<int>(i));
            write_label_map(dir + "/" + lb, ds.unlabeled_truth[i]);
            entry["diagnostic_label"] = lb;
        }
        unlabeled.push_back(entry);
    }
    manifest["unlabeled"] = unlabeled;

    nlohmann::json validation = nlohmann::json::array();
    for (size_t i = 0; i < ds.validation.size(); ++i) {
        std::string im = img_name("val", static_cast<int>(i)), lb = lbl_name("val", static_cast<int>(i));
        write_tensor(dir + "/" + im, ds.validation[i].image.data);
        write_label_map(dir + "/" + lb, ds.validation[i].label);
        validation.push_back({{"image", im}, {"label", lb}, {"id", ds.validation[i].image.id}});
    }
    manifest["validation"] = validation;

    write_tensor(dir + "/signatures.stpg", ds.signatures);
    manifest["signatures"] = "signatures.stpg";

    std::ofstream f(dir + "/manifest.json");
    if (!f) throw IoError(IoStatus::io_failure, dir + "/manifest.json: cannot open for writing");
    f << manifest.dump(2) << "\n";
    if (!f) throw IoError(IoStatus::io_failure, dir + "/manifest.json: write failed");
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw IoError(IoStatus::io_failure, dir + "/manifest.json: cannot open");
    nlohmann::json manifest = nlohmann::json::parse(f);

    Dataset ds;
    ds.spec = spec_from_json(manifest.at("spec"));

    for (const auto& e : manifest.at("labeled")) {
        LabeledItem item;
        item.image.data = read_tensor(dir + "/" + e.at("image").get<std::string>());
        item.image.id = e.value("id", "");
        item.label = read_label_map(dir + "/" + e.at("label").get<std::string>());
        ds.labeled.push_back(std::move(item));
    }
    for (const auto& e : manifest.at("unlabeled")) {
        UnlabeledItem item;
        item.image.data = read_tensor(dir + "/" + e.at("image").get<std::string>());
        item.image.id = e.value("id", "");
        ds.unlabeled.push_back(std::move(item));
        if (e.contains("diagnostic_label"))
            ds.unlabeled_truth.push_back(
                read_label_map(dir + "/" + e.at("diagnostic_label").get<std::string>()));
    }
    for (const auto& e : manifest.at("validation")) {
        LabeledItem item;
        item.image.data = read_tensor(dir + "/" + e.at("image").get<std::string>());
        item.image.id = e.value("id", "");
        item.label = read_label_map(dir + "/" + e.at("label").get<std::string>());
        ds.validation.push_back(std::move(item));
    }
    if (manifest.contains("signatures"))
        ds.signatures = read_tensor(dir + "/" + manifest["signatures"].get<std::string>());
    return ds;
}

}  // namespace stpg
