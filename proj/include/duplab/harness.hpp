#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "duplab/adversarial.hpp"
#include "duplab/dataset.hpp"
#include "duplab/decomposition.hpp"
#include "duplab/duplication.hpp"
#include "duplab/mlp.hpp"
#include "duplab/svm.hpp"

namespace duplab {

enum class ExperimentKind { gaussian, image, bvd };
enum class ModelKind { svm, mlp };

// Classifier hyperparameters whose input/output widths are resolved from the
// data at run time.
struct MlpSettings {
    std::vector<std::size_t> hidden{128};
    Activation activation = Activation::relu;
    double learning_rate = 0.05;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double weight_init_scale = 1.0;
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::gaussian;
    std::vector<int> d_rates;           // empty selects the per-experiment default
    std::vector<std::uint64_t> seeds{1};
    DuplicationPolicy policy;           // rate_percent is filled per sweep point
    ModelKind model = ModelKind::svm;
    bool adversarial = false;
    PgdConfig pgd;
    GaussianSpec gaussian;
    ImageSource image;
    SvmConfig svm;
    MlpSettings mlp;
    std::size_t test_per_class = 1000;
    std::size_t train_per_class = 0;    // image runs: subsample size, 0 keeps everything
    std::size_t bvd_replicates = 40;
    std::size_t bvd_eval_per_class = 150;
    std::string out_dir = "results";
    std::string name;                   // output stem; empty selects the experiment name
};

struct SweepRecord {
    std::string experiment;
    int d_rate = 0;
    std::uint64_t seed = 0;
    std::vector<int> class_labels;  // sorted; aligns the per-class vectors below
    std::vector<double> d_ratio;
    std::vector<double> acc_orig;
    std::vector<double> acc_dup;
    double overall_orig = 0.0;
    double overall_dup = 0.0;
    bool has_image_metrics = false;
    double test_acc = 0.0;
    double repetitive_train_acc = 0.0;
    double non_repetitive_train_acc = 0.0;
    bool has_adv_metrics = false;
    double adv_test_acc = 0.0;
    double adv_train_acc = 0.0;
    double adv_non_repetitive_train_acc = 0.0;
    std::string fingerprint;
};

// Config file round-trip. The JSON document mirrors ExperimentConfig; every
// field is optional on load and serialized on dump, so a sidecar dump always
// reproduces its run.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// FNV-1a hash (hex) of the canonical config dump.
std::string config_fingerprint(const ExperimentConfig& cfg);

// Resolved d-rate grid: the configured list, or the experiment default
// (0..90 for gaussian sweeps, 0..100 for image sweeps).
std::vector<int> resolved_d_rates(const ExperimentConfig& cfg);

std::vector<SweepRecord> run_gaussian_sweep(const ExperimentConfig& cfg);
std::vector<SweepRecord> run_image_sweep(const ExperimentConfig& cfg);

// Probe rows tagged with the sweep seed that produced them.
std::vector<std::pair<std::uint64_t, ProbeRow>> run_bvd_probe_rows(
    const ExperimentConfig& cfg);
std::vector<ProbeRow> run_bvd_probe(const ExperimentConfig& cfg);

// Deterministic CSV emission: documented header, rows sorted by
// (d_rate, seed), shortest round-trip numbers. Rewriting the same records
// yields identical bytes.
void emit_csv(const std::vector<SweepRecord>& records, const std::string& path);
void emit_probe_csv(const std::vector<std::pair<std::uint64_t, ProbeRow>>& rows,
                    const std::string& fingerprint, const std::string& path);
void emit_probe_csv(const std::vector<ProbeRow>& rows, const std::string& fingerprint,
                    const std::string& path);

// Runs the configured experiment, writes `<out>/<name>.csv` and the sidecar
// `<out>/<name>_config.json`, and returns the CSV path.
std::string run_experiment(const ExperimentConfig& cfg);

// CLI entry point (subcommands gaussian | image | bvd | dedup). Returns 0 on
// success, 2 on usage errors, 1 on runtime failures.
int cli_main(int argc, const char* const* argv);

}  // namespace duplab
