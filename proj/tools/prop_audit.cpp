// prop_audit: train desk-scale benign/backdoored models and audit them with
// noise-perturbed inference.
//
// Exit codes: 0 success (detect: benign verdict), 3 detect: backdoored
// verdict, 2 usage/config/format error, 1 runtime failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prop/prop.hpp"

namespace fs = std::filesystem;
using namespace prop;

namespace {

struct ResolvedData {
    Dataset train;
    Dataset test;
    std::string name;
};

constexpr int kSynthClasses = 10;
constexpr int kSynthPerClassTrain = 200;
constexpr int kSynthPerClassTest = 50;
constexpr int kSynthImageSize = 28;

ResolvedData resolve_dataset(const std::string& spec, std::uint64_t data_seed) {
    ResolvedData d;
    if (spec == "synthetic") {
        auto pair = generate_synthetic_pair(kSynthClasses, kSynthPerClassTrain,
                                            kSynthPerClassTest, kSynthImageSize, data_seed);
        d.train = std::move(pair.first);
        d.test = std::move(pair.second);
        d.name = "synthetic";
    } else {
        d.train = load_dataset_dir(spec, "train");
        d.test = load_dataset_dir(spec, "test");
        d.name = fs::path(spec).filename().string();
        if (d.name.empty()) d.name = spec;
    }
    return d;
}

int parse_arch_x(const std::string& arch) {
    const auto plus = arch.find('+');
    if (plus == std::string::npos || arch.substr(plus) != "+2")
        throw UsageError("--arch must look like 'X+2', got '" + arch + "'");
    try {
        return std::stoi(arch.substr(0, plus));
    } catch (const std::exception&) {
        throw UsageError("--arch must look like 'X+2', got '" + arch + "'");
    }
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

TriggerSpec make_trigger(const std::string& attack, const std::vector<int>& image_shape,
                         int target_class, double poison_rate, int trigger_size, float alpha) {
    if (attack == "badnets")
        return make_badnets_trigger(image_shape, target_class, poison_rate, trigger_size);
    if (attack == "blended")
        return make_blended_trigger(image_shape, target_class, poison_rate, alpha);
    throw UsageError("unknown attack '" + attack + "'");
}

struct TrainJobResult {
    Network net;
    std::vector<EpochStats> history;
    double test_acc = 0.0;
    double test_asr = std::numeric_limits<double>::quiet_NaN();
};

TrainJobResult run_train_job(const ResolvedData& data, int arch_x, std::vector<int> widths,
                             const std::string& attack, int target_class, double poison_rate,
                             int trigger_size, float alpha, const TrainConfig& cfg) {
    const ArchSpec arch = build_x_plus_2(arch_x, std::move(widths),
                                         data.train.images[0].shape, data.train.num_classes);
    TrainJobResult result;
    if (attack == "none") {
        result.net = train(arch, data.train, cfg, &result.history);
    } else {
        const TriggerSpec trig = make_trigger(attack, data.train.images[0].shape, target_class,
                                              poison_rate, trigger_size, alpha);
        const PoisonedDataset poisoned =
            poison_dataset(data.train, trig, derive_seed(cfg.seed, 0xb0150ULL), PoisonMode::append);
        result.net = train(arch, poisoned, cfg, &result.history);
        result.test_asr = attack_success_rate(result.net, data.test, trig);
    }
    result.test_acc = evaluate(result.net, data.test);

    result.net.metadata["attack"] = attack;
    result.net.metadata["dataset"] = data.name;
    result.net.metadata["seed"] = std::to_string(cfg.seed);
    result.net.metadata["arch"] = std::to_string(arch_x) + "+2";
    result.net.metadata["test_acc"] = std::to_string(result.test_acc);
    if (attack != "none") {
        result.net.metadata["target_class"] = std::to_string(target_class);
        result.net.metadata["poison_rate"] = std::to_string(poison_rate);
        result.net.metadata["test_asr"] = std::to_string(result.test_asr);
    }
    return result;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ProP backdoor audit: train desk-scale models, poison datasets, and flag "
                 "backdoored models from their noise-perturbed output distribution"};
    app.require_subcommand(1);

    // --- gen-dataset --------------------------------------------------------
    auto* gen = app.add_subcommand("gen-dataset", "Write a synthetic IDX dataset directory");
    std::string gen_out;
    int gen_classes = kSynthClasses, gen_train = kSynthPerClassTrain,
        gen_test = kSynthPerClassTest, gen_size = kSynthImageSize;
    std::uint64_t gen_seed = 1234;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--classes", gen_classes, "number of classes");
    gen->add_option("--per-class-train", gen_train, "training samples per class");
    gen->add_option("--per-class-test", gen_test, "test samples per class");
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--seed", gen_seed, "generator seed");

    // --- train ---------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train a benign or backdoored model");
    std::string tr_arch = "3+2", tr_dataset = "synthetic", tr_attack = "none";
    std::string tr_widths, tr_out, tr_history, tr_config;
    double tr_poison_rate = 0.1;
    int tr_target = 0, tr_trigger_size = 4;
    float tr_alpha = 0.2f;
    std::uint64_t tr_seed = 1, tr_data_seed = 1234;
    std::optional<int> tr_epochs, tr_batch;
    std::optional<double> tr_lr, tr_momentum;
    tr->add_option("--arch", tr_arch, "architecture, e.g. 3+2");
    tr->add_option("--widths", tr_widths, "conv channel widths, e.g. 8,16,32");
    tr->add_option("--dataset", tr_dataset, "'synthetic' or an IDX dataset directory");
    tr->add_option("--data-seed", tr_data_seed, "synthetic dataset seed");
    tr->add_option("--attack", tr_attack, "attack type")
        ->check(CLI::IsMember({"none", "badnets", "blended"}));
    tr->add_option("--poison-rate", tr_poison_rate, "fraction of samples to poison");
    tr->add_option("--target-class", tr_target, "attack target class");
    tr->add_option("--trigger-size", tr_trigger_size, "badnets patch side length");
    tr->add_option("--alpha", tr_alpha, "blended trigger weight");
    tr->add_option("--seed", tr_seed, "training seed");
    tr->add_option("--config", tr_config, "key=value training config file");
    tr->add_option("--epochs", tr_epochs, "epoch budget");
    tr->add_option("--batch-size", tr_batch, "mini-batch size");
    tr->add_option("--lr", tr_lr, "learning rate");
    tr->add_option("--momentum", tr_momentum, "SGD momentum");
    std::optional<double> tr_wd;
    tr->add_option("--weight-decay", tr_wd, "L2 penalty on weights");
    tr->add_option("--out", tr_out, "output model file")->required();
    tr->add_option("--history", tr_history, "write per-epoch CSV here");

    // --- detect ---------------------------------------------------------------
    auto* de = app.add_subcommand("detect", "Audit a model for backdoors");
    std::string de_model, de_input = "noise", de_json, de_csv;
    double de_sigma2 = 10000.0, de_threshold = 0.15;
    int de_runs = 1000;
    std::uint64_t de_seed = 0;
    bool de_mean_softmax = false;
    de->add_option("--model", de_model, "PROPMDL1 model file")->required();
    de->add_option("--sigma2", de_sigma2, "noise variance");
    de->add_option("--runs", de_runs, "Monte Carlo runs");
    de->add_option("--threshold", de_threshold, "benign-score threshold");
    de->add_option("--input-source", de_input,
                   "'noise' or an IDX dataset directory (test split)");
    de->add_option("--seed", de_seed, "master seed");
    de->add_option("--out-json", de_json, "write the detection report here");
    de->add_option("--out-csv", de_csv, "write the class histogram here");
    de->add_flag("--score-mean-softmax", de_mean_softmax,
                 "score the mean softmax instead of argmax frequencies");

    // --- sweep-capacity ---------------------------------------------------------
    auto* sc = app.add_subcommand("sweep-capacity",
                                  "Train backdoored X+2 models across X and report benign scores");
    std::string sc_dataset = "synthetic", sc_attack = "badnets", sc_out, sc_dir, sc_config;
    int sc_xmin = 2, sc_xmax = 6, sc_seeds = 3, sc_target = 0, sc_trigger_size = 4, sc_runs = 1000;
    double sc_poison_rate = 0.1, sc_sigma2 = 10000.0;
    float sc_alpha = 0.2f;
    std::uint64_t sc_seed_base = 1, sc_data_seed = 1234, sc_detect_seed = 0;
    sc->add_option("--x-min", sc_xmin, "smallest X");
    sc->add_option("--x-max", sc_xmax, "largest X");
    sc->add_option("--seeds", sc_seeds, "models per X");
    sc->add_option("--seed-base", sc_seed_base, "first training seed");
    sc->add_option("--dataset", sc_dataset, "'synthetic' or an IDX dataset directory");
    sc->add_option("--data-seed", sc_data_seed, "synthetic dataset seed");
    sc->add_option("--attack", sc_attack, "attack type")
        ->check(CLI::IsMember({"badnets", "blended"}));
    sc->add_option("--poison-rate", sc_poison_rate, "fraction of samples to poison");
    sc->add_option("--target-class", sc_target, "attack target class");
    sc->add_option("--trigger-size", sc_trigger_size, "badnets patch side length");
    sc->add_option("--alpha", sc_alpha, "blended trigger weight");
    sc->add_option("--sigma2", sc_sigma2, "detector noise variance");
    sc->add_option("--runs", sc_runs, "detector Monte Carlo runs");
    sc->add_option("--detect-seed", sc_detect_seed, "detector master seed");
    sc->add_option("--config", sc_config, "key=value training config file");
    std::optional<int> sc_epochs;
    sc->add_option("--epochs", sc_epochs, "epoch budget override");
    sc->add_option("--out", sc_out, "output CSV")->required();
    sc->add_option("--out-dir", sc_dir, "also save trained models here");

    // --- sweep-noise -----------------------------------------------------------
    auto* sn = app.add_subcommand("sweep-noise",
                                  "Estimate the output distribution across noise variances");
    std::string sn_model, sn_variances = "4,16,100,1000,10000", sn_out, sn_input = "noise";
    int sn_runs = 1000;
    std::uint64_t sn_seed = 0;
    sn->add_option("--model", sn_model, "PROPMDL1 model file")->required();
    sn->add_option("--variances", sn_variances, "ascending variance list, e.g. 4,100,10000");
    sn->add_option("--runs", sn_runs, "Monte Carlo runs per point");
    sn->add_option("--seed", sn_seed, "master seed");
    sn->add_option("--input-source", sn_input, "'noise' or an IDX dataset directory");
    sn->add_option("--out", sn_out, "output CSV")->required();

    // --- report ---------------------------------------------------------------
    auto* rp = app.add_subcommand("report", "Aggregate detection reports into a table");
    std::string rp_dir, rp_csv;
    rp->add_option("--dir", rp_dir, "directory of *.json detection reports")->required();
    rp->add_option("--out-csv", rp_csv, "also write the table as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) {
            auto pair = generate_synthetic_pair(gen_classes, gen_train, gen_test, gen_size,
                                                gen_seed);
            save_dataset_dir(pair.first, pair.second, gen_out);
            std::printf("wrote %zu train / %zu test samples to %s\n", pair.first.size(),
                        pair.second.size(), gen_out.c_str());
            return 0;
        }

        if (*tr) {
            TrainConfig cfg;
            if (!tr_config.empty()) cfg = load_train_config(tr_config);
            if (tr_epochs) cfg.epochs = *tr_epochs;
            if (tr_batch) cfg.batch_size = *tr_batch;
            if (tr_lr) cfg.learning_rate = *tr_lr;
            if (tr_momentum) cfg.momentum = *tr_momentum;
            if (tr_wd) cfg.weight_decay = *tr_wd;
            cfg.seed = tr_seed;

            const ResolvedData data = resolve_dataset(tr_dataset, tr_data_seed);
            const int x = parse_arch_x(tr_arch);
            TrainJobResult result =
                run_train_job(data, x, tr_widths.empty() ? std::vector<int>{} :
                                                           parse_int_list(tr_widths),
                              tr_attack, tr_target, tr_poison_rate, tr_trigger_size, tr_alpha,
                              cfg);
            save_model(result.net, tr_out);
            if (!tr_history.empty()) write_history_csv(result.history, tr_history);
            if (std::isnan(result.test_asr))
                std::printf("trained %s (%s) test_acc=%.4f -> %s\n", tr_arch.c_str(),
                            tr_attack.c_str(), result.test_acc, tr_out.c_str());
            else
                std::printf("trained %s (%s) test_acc=%.4f asr=%.4f -> %s\n", tr_arch.c_str(),
                            tr_attack.c_str(), result.test_acc, result.test_asr, tr_out.c_str());
            return 0;
        }

        if (*de) {
            if (de_runs < 1) throw UsageError("--runs must be >= 1");
            const Network net = load_model(de_model);
            Dataset samples;
            DetectorSettings settings;
            settings.sigma2 = de_sigma2;
            settings.runs = de_runs;
            settings.threshold = de_threshold;
            settings.seed = de_seed;
            settings.score_mean_softmax = de_mean_softmax;
            if (de_input != "noise") {
                samples = load_dataset_dir(de_input, "test");
                settings.input_samples = &samples;
            }
            DetectionReport report = detect(net, settings);
            report.model_sha256 = sha256_file_hex(de_model);
            if (!de_json.empty()) write_report_json(report, de_json);
            if (!de_csv.empty()) write_histogram_csv(report.distribution, de_csv);
            std::printf("verdict=%s benign_score=%.6f suspected_target=%d threshold=%g\n",
                        report.verdict().c_str(), report.benign_score, report.suspected_target,
                        report.threshold);
            return report.backdoored ? 3 : 0;
        }

        if (*sc) {
            if (sc_xmin < 1 || sc_xmax < sc_xmin)
                throw UsageError("need 1 <= x-min <= x-max");
            if (sc_seeds < 1) throw UsageError("--seeds must be >= 1");
            TrainConfig base_cfg;
            if (!sc_config.empty()) base_cfg = load_train_config(sc_config);
            if (sc_epochs) base_cfg.epochs = *sc_epochs;
            const ResolvedData data = resolve_dataset(sc_dataset, sc_data_seed);
            if (!sc_dir.empty()) fs::create_directories(sc_dir);

            std::ostringstream csv;
            csv << "x,mean_beta_s,std_beta_s\n";
            for (int x = sc_xmin; x <= sc_xmax; ++x) {
                std::vector<double> scores;
                for (int s = 0; s < sc_seeds; ++s) {
                    TrainConfig cfg = base_cfg;
                    cfg.seed = sc_seed_base + static_cast<std::uint64_t>(s);
                    TrainJobResult result =
                        run_train_job(data, x, {}, sc_attack, sc_target, sc_poison_rate,
                                      sc_trigger_size, sc_alpha, cfg);
                    DetectorSettings settings;
                    settings.sigma2 = sc_sigma2;
                    settings.runs = sc_runs;
                    settings.seed = derive_seed(sc_detect_seed,
                                                static_cast<std::uint64_t>(x * 100 + s));
                    const DetectionReport report = detect(result.net, settings);
                    scores.push_back(report.benign_score);
                    if (!sc_dir.empty()) {
                        const std::string stem = std::to_string(x) + "p2_seed" +
                                                 std::to_string(cfg.seed);
                        save_model(result.net, fs::path(sc_dir) / (stem + ".propmdl"));
                        write_report_json(report, fs::path(sc_dir) / (stem + ".json"));
                    }
                    std::printf("x=%d seed=%llu beta_s=%.6f asr=%.4f\n", x,
                                static_cast<unsigned long long>(cfg.seed), report.benign_score,
                                result.test_asr);
                }
                const double mean = mean_of(scores);
                double var = 0.0;
                for (double v : scores) var += (v - mean) * (v - mean);
                const double sd = std::sqrt(var / static_cast<double>(scores.size()));
                char line[96];
                std::snprintf(line, sizeof(line), "%d,%.6g,%.6g\n", x, mean, sd);
                csv << line;
            }
            atomic_write_text(sc_out, csv.str());
            std::printf("wrote %s\n", sc_out.c_str());
            return 0;
        }

        if (*sn) {
            if (sn_runs < 1) throw UsageError("--runs must be >= 1");
            const Network net = load_model(sn_model);
            Dataset samples;
            const Dataset* input_samples = nullptr;
            if (sn_input != "noise") {
                samples = load_dataset_dir(sn_input, "test");
                input_samples = &samples;
            }
            const auto variances = parse_double_list(sn_variances);
            const auto points = convergence_sweep(net, variances, sn_runs, sn_seed, input_samples);
            std::ostringstream csv;
            csv << "sigma2,tv_distance,beta_s\n";
            char line[96];
            for (const auto& pt : points) {
                std::snprintf(line, sizeof(line), "%.6g,%.6g,%.6g\n", pt.sigma2,
                              pt.tv_to_reference, pt.benign_score);
                csv << line;
            }
            atomic_write_text(sn_out, csv.str());
            std::printf("wrote %s\n", sn_out.c_str());
            return 0;
        }

        if (*rp) {
            std::vector<DetectionReport> reports;
            if (fs::is_directory(rp_dir)) {
                std::vector<fs::path> paths;
                for (const auto& entry : fs::directory_iterator(rp_dir))
                    if (entry.path().extension() == ".json") paths.push_back(entry.path());
                std::sort(paths.begin(), paths.end());
                for (const auto& p : paths) reports.push_back(load_report_json(p));
            }
            if (reports.empty())
                throw UsageError("no detection reports found in '" + rp_dir + "'");
            const ReportTable table = aggregate_reports(reports);
            std::fputs(format_table_text(table).c_str(), stdout);
            if (!rp_csv.empty()) atomic_write_text(rp_csv, format_table_csv(table));
            return 0;
        }
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericOverflowError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {  // usage/config/dimension/placement errors
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::out_of_range& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
