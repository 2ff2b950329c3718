#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "stpg/dataset.hpp"
#include "stpg/model.hpp"

namespace stpg {

struct EvalReport {
    std::vector<double> iou;       // -1 marks classes absent from GT and predictions
    double miou = 0.0;
    double pixel_accuracy = 0.0;
    double tail_miou = 0.0;        // mean IoU over tail_classes present in the data
    std::vector<int> tail_classes;
    int64_t step = 0;
};

// Gen-Student evaluation: no augmentation, IoU = TP/(TP+FP+FN) per class,
// mean over classes present in ground truth or predictions. Ignored pixels
// are excluded everywhere.
EvalReport evaluate(const ModelParams& model, std::span<const LabeledItem> val_set,
                    const std::vector<int>& tail_classes, int64_t step);

void write_report(const std::string& path, const EvalReport& report);

struct StepRecord {
    int64_t step = 0;
    double lr = 0.0;
    double loss_s = 0.0;
    double loss_u_pro = 0.0;
    double loss_u_gen = 0.0;
    double loss_ac = 0.0;
    double loss_sim = 0.0;
    double loss_total = 0.0;
    int64_t cons_pixels = 0, hmis_pixels = 0, lmis_pixels = 0;
    std::vector<double> mismatch;      // per-class I for the mini-batch
    std::vector<int64_t> bank_counts;  // memory bank occupancy per class
    bool skipped = false;
};

std::string to_json_line(const StepRecord& rec);
StepRecord step_record_from_json(const std::string& line);

// Append-only JSON-lines log; write failures (e.g. disk full) are fatal.
class TelemetryWriter {
public:
    explicit TelemetryWriter(const std::string& path);
    void log(const StepRecord& rec);

private:
    std::ofstream out_;
    std::string path_;
};

}  // namespace stpg
