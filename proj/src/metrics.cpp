#include "stpg/metrics.hpp"

#include <stdexcept>

#include "json.hpp"

#include "stpg/io.hpp"

namespace stpg {

EvalReport evaluate(const ModelParams& model, std::span<const LabeledItem> val_set,
                    const std::vector<int>& tail_classes, int64_t step) {
    if (val_set.empty()) throw std::invalid_argument("evaluate: empty validation set");
    const int c = model.dims.num_classes;

    // rows = ground truth, cols = prediction
    std::vector<int64_t> confusion(static_cast<size_t>(c) * c, 0);
    for (const LabeledItem& item : val_set) {
        ForwardResult fr = forward(model, item.image);
        LabelMap pred = argmax_map(softmax_channelwise(fr.logits));
        for (int x = 0; x < pred.width; ++x)
            for (int y = 0; y < pred.height; ++y) {
                uint8_t gt = item.label.at(x, y);
                if (gt == kIgnoreLabel) continue;
                ++confusion[static_cast<size_t>(gt) * c + pred.at(x, y)];
            }
    }

    EvalReport report;
    report.step = step;
    report.tail_classes = tail_classes;
    report.iou.assign(static_cast<size_t>(c), -1.0);

    int64_t correct = 0, total = 0;
    for (int k = 0; k < c; ++k) {
        correct += confusion[static_cast<size_t>(k) * c + k];
        for (int j = 0; j < c; ++j) total += confusion[static_cast<size_t>(k) * c + j];
    }
    report.pixel_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

    double sum = 0.0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
        int64_t tp = confusion[static_cast<size_t>(k) * c + k];
        int64_t fn = 0, fp = 0;
        for (int j = 0; j < c; ++j) {
            if (j == k) continue;
            fn += confusion[static_cast<size_t>(k) * c + j];
            fp += confusion[static_cast<size_t>(j) * c + k];
        }
        int64_t denom = tp + fp + fn;
        if (denom == 0) continue;  // absent from GT and predictions
        report.iou[static_cast<size_t>(k)] = static_cast<double>(tp) / static_cast<double>(denom);
        sum += report.iou[static_cast<size_t>(k)];
        ++present;
    }
    report.miou = present > 0 ? sum / present : 0.0;

    double tail_sum = 0.0;
    int tail_present = 0;
    for (int k : tail_classes) {
        if (k < 0 || k >= c || report.iou[static_cast<size_t>(k)] < 0.0) continue;
        tail_sum += report.iou[static_cast<size_t>(k)];
        ++tail_present;
    }
    report.tail_miou = tail_present > 0 ? tail_sum / tail_present : 0.0;
    return report;
}

void write_report(const std::string& path, const EvalReport& report) {
    nlohmann::json j;
    j["step"] = report.step;
    j["miou"] = report.miou;
    j["pixel_accuracy"] = report.pixel_accuracy;
    j["tail_miou"] = report.tail_miou;
    j["tail_classes"] = report.tail_classes;
    j["iou"] = report.iou;
    std::ofstream f(path);
    if (!f) throw IoError(IoStatus::io_failure, path + ": cannot open for writing");
    f << j.dump(2) << "\n";
    if (!f) throw IoError(IoStatus::io_failure, path + ": write failed");
}

std::string to_json_line(const StepRecord& rec) {
    nlohmann::json j;
    j["step"] = rec.step;
    j["lr"] = rec.lr;
    j["loss_s"] = rec.loss_s;
    j["loss_u_pro"] = rec.loss_u_pro;
    j["loss_u_gen"] = rec.loss_u_gen;
    j["loss_ac"] = rec.loss_ac;
    j["loss_sim"] = rec.loss_sim;
    j["loss_total"] = rec.loss_total;
    j["cons"] = rec.cons_pixels;
    j["hmis"] = rec.hmis_pixels;
    j["lmis"] = rec.lmis_pixels;
    j["mismatch"] = rec.mismatch;
    j["bank"] = rec.bank_counts;
    j["skipped"] = rec.skipped;
    return j.dump();
}

StepRecord step_record_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    StepRecord rec;
    rec.step = j.at("step").get<int64_t>();
    rec.lr = j.at("lr").get<double>();
    rec.loss_s = j.at("loss_s").get<double>();
    rec.loss_u_pro = j.at("loss_u_pro").get<double>();
    rec.loss_u_gen = j.at("loss_u_gen").get<double>();
    rec.loss_ac = j.at("loss_ac").get<double>();
    rec.loss_sim = j.at("loss_sim").get<double>();
    rec.loss_total = j.at("loss_total").get<double>();
    rec.cons_pixels = j.at("cons").get<int64_t>();
    rec.hmis_pixels = j.at("hmis").get<int64_t>();
    rec.lmis_pixels = j.at("lmis").get<int64_t>();
    rec.mismatch = j.at("mismatch").get<std::vector<double>>();
    rec.bank_counts = j.at("bank").get<std::vector<int64_t>>();
    rec.skipped = j.at("skipped").get<bool>();
    return rec;
}

TelemetryWriter::TelemetryWriter(const std::string& path) : out_(path), path_(path) {
    if (!out_) throw IoError(IoStatus::io_failure, path + ": cannot open for writing");
}

void TelemetryWriter::log(const StepRecord& rec) {
    out_ << to_json_line(rec) << "\n";
    out_.flush();
    if (!out_) throw IoError(IoStatus::io_failure, path_ + ": telemetry write failed");
}

}  // namespace stpg
