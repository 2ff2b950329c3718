// stpg-lab: synergistic semi-supervised segmentation lab bench.
//
// Subcommands: gen-data, train, eval, fit-anchors, refine-labels.
// Exit codes: 0 success, 2 config error, 3 numeric abort, 1 other failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "stpg/anchors.hpp"
#include "stpg/config.hpp"
#include "stpg/dataset.hpp"
#include "stpg/io.hpp"
#include "stpg/metrics.hpp"
#include "stpg/pseudo.hpp"
#include "stpg/trainer.hpp"

namespace fs = std::filesystem;
using namespace stpg;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericAbort = 3;

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
    std::ifstream f(spec_path);
    if (!f) throw ConfigError("cannot open spec file: " + spec_path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ConfigError("spec file is not valid JSON: " + spec_path);

    DatasetSpec spec;
    try {
        spec.num_classes = j.at("num_classes").get<int>();
        spec.width = j.at("width").get<int>();
        spec.height = j.at("height").get<int>();
        spec.channels = j.at("channels").get<int>();
        spec.class_freq = j.at("class_freq").get<std::vector<double>>();
        spec.snr = j.at("snr").get<double>();
        spec.n_labeled = j.at("n_labeled").get<int>();
        spec.n_unlabeled = j.at("n_unlabeled").get<int>();
        spec.n_val = j.value("n_val", 8);
        spec.seed = j.value("seed", static_cast<uint64_t>(1));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("spec parse error: ") + e.what());
    }
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    Dataset ds = generate_dataset(spec);
    save_dataset(ds, out_dir);
    std::cout << "wrote " << ds.labeled.size() << " labeled, " << ds.unlabeled.size()
              << " unlabeled, " << ds.validation.size() << " validation images to " << out_dir
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume,
              const std::string& out_override) {
    RunConfig cfg = load_config_file(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;

    Trainer trainer(cfg);
    if (!resume.empty()) trainer.load_checkpoint(resume);
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream cf(cfg.out_dir + "/config.json");
        cf << config_to_json(cfg).dump(2) << "\n";
    }

    TelemetryWriter telemetry(cfg.out_dir + "/telemetry.jsonl");
    RunResult result = trainer.run(&telemetry);
    std::cout << "finished " << result.steps_run << " steps; final mIoU " << result.final_report.miou
              << ", tail mIoU " << result.final_report.tail_miou << ", best mIoU "
              << result.best_report.miou << "\n";
    std::cout << "artifacts in " << cfg.out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir, const std::string& out_path,
             double tail_threshold) {
    ModelParams model = load_checkpoint_gen_student(ckpt_dir);
    Dataset ds = load_dataset(data_dir);
    if (ds.validation.empty()) throw ConfigError("dataset has no validation split: " + data_dir);

    std::vector<int> tails;
    for (size_t c = 0; c < ds.spec.class_freq.size(); ++c)
        if (ds.spec.class_freq[c] < tail_threshold) tails.push_back(static_cast<int>(c));

    EvalReport report = evaluate(model, ds.validation, tails, 0);
    write_report(out_path, report);
    std::cout << "mIoU " << report.miou << ", pixel accuracy " << report.pixel_accuracy
              << ", tail mIoU " << report.tail_miou << " -> " << out_path << "\n";
    return 0;
}

int cmd_fit_anchors(int classes, int dim, double tau, uint64_t seed, const std::string& out_path) {
    if (classes < 2 || dim < 2) throw ConfigError("fit-anchors: need --classes >= 2 and --dim >= 2");
    if (tau <= 0.0) throw ConfigError("fit-anchors: tau must be positive");
    Rng rng = Rng(seed).derive(0xA17C);
    AnchorSet anchors = fit_anchors(classes, dim, tau, rng);
    write_tensor(out_path, anchors.v);
    std::cout << "anchors [" << classes << "," << dim << "] energy "
              << anchor_energy(anchors.v, tau) << (anchors.converged ? "" : " (not converged)")
              << " -> " << out_path << "\n";
    return anchors.converged ? 0 : 1;
}

int cmd_refine_labels(const std::string& pro_path, const std::string& gen_path,
                      const std::string& out_dir) {
    Tensor pro_t = read_tensor(pro_path);
    Tensor gen_t = read_tensor(gen_path);
    if (pro_t.rank() != 3 || gen_t.rank() != 3 || pro_t.shape() != gen_t.shape())
        throw ConfigError("refine-labels: inputs must be rank-3 probability maps of equal shape");
    ProbabilityMap pro{std::move(pro_t)}, gen{std::move(gen_t)};
    if (!pro.valid() || !gen.valid())
        throw ConfigError("refine-labels: inputs are not per-pixel probability distributions");

    ConfusionMatrix confusion =
        build_confusion(argmax_map(pro), argmax_map(gen), pro.classes());
    std::vector<double> scores = mismatch_scores(confusion);
    PseudoLabelPartition part = partition_pseudo_labels(pro, gen, scores);

    OneHotMap target = part.cons;
    for (size_t i = 0; i < target.v.size(); ++i)
        target.v[i] = static_cast<uint8_t>(target.v[i] | part.hmis.v[i]);
    WeightMap omega = confidence_weights(gen, target);

    fs::create_directories(out_dir);
    write_one_hot(out_dir + "/cons.stpg", part.cons);
    write_one_hot(out_dir + "/hmis.stpg", part.hmis);
    write_one_hot(out_dir + "/lmis.stpg", part.lmis);
    write_weight_map(out_dir + "/omega.stpg", omega);

    std::ofstream csv(out_dir + "/confusion.csv");
    for (int p = 0; p < confusion.num_classes; ++p) {
        for (int q = 0; q < confusion.num_classes; ++q)
            csv << confusion.at(p, q) << (q + 1 < confusion.num_classes ? "," : "");
        csv << "\n";
    }
    std::ofstream js(out_dir + "/mismatch.json");
    js << nlohmann::json({{"mismatch", scores},
                          {"cons", part.cons_count()},
                          {"hmis", part.hmis_count()},
                          {"lmis", part.lmis_count()}})
              .dump(2)
       << "\n";

    std::cout << "cons " << part.cons_count() << ", hmis " << part.hmis_count() << ", lmis "
              << part.lmis_count() << " -> " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"STPG synergistic semi-supervised segmentation lab"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    std::string spec_path, gen_out;
    gen->add_option("--spec", spec_path, "Dataset spec JSON")->required();
    gen->add_option("--out", gen_out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Run the synergistic training loop");
    std::string config_path, resume, train_out;
    train->add_option("--config", config_path, "Run config JSON")->required();
    train->add_option("--resume", resume, "Checkpoint directory to resume from");
    train->add_option("--out", train_out, "Override the config out_dir");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint's Gen-Student");
    std::string ckpt_dir, data_dir, eval_out = "report.json";
    double tail_threshold = 0.05;
    eval->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
    eval->add_option("--data", data_dir, "Dataset directory (from gen-data)")->required();
    eval->add_option("--out", eval_out, "Report path");
    eval->add_option("--tail-threshold", tail_threshold, "Tail-class frequency threshold");

    auto* anchors = app.add_subcommand("fit-anchors", "Pre-optimize uniform class anchors");
    int classes = 6, dim = 16;
    double tau = 0.5;
    uint64_t seed = 1;
    std::string anchors_out;
    anchors->add_option("--classes", classes, "Number of classes")->required();
    anchors->add_option("--dim", dim, "Feature dimension")->required();
    anchors->add_option("--tau", tau, "Temperature");
    anchors->add_option("--seed", seed, "Random seed");
    anchors->add_option("--out", anchors_out, "Output tensor path")->required();

    auto* refine = app.add_subcommand("refine-labels", "Partition pseudo-labels offline");
    std::string pro_path, gen_path, refine_out;
    refine->add_option("--pro", pro_path, "Pro-Student probability map")->required();
    refine->add_option("--gen", gen_path, "Gen-Teacher probability map")->required();
    refine->add_option("--out", refine_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(spec_path, gen_out);
        if (train->parsed()) return cmd_train(config_path, resume, train_out);
        if (eval->parsed()) return cmd_eval(ckpt_dir, data_dir, eval_out, tail_threshold);
        if (anchors->parsed()) return cmd_fit_anchors(classes, dim, tau, seed, anchors_out);
        if (refine->parsed()) return cmd_refine_labels(pro_path, gen_path, refine_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const NumericAbort& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumericAbort;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
