#include "duplab/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "duplab/parallel.hpp"
#include "duplab/rng.hpp"

namespace duplab {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t default_workers() {
    if (const char* env = std::getenv("DUPLAB_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

namespace {

// sub-stream roles for per-run seed derivation
constexpr std::uint64_t kTrainSalt = 0x7261;
constexpr std::uint64_t kTestSalt = 0x7e57;
constexpr std::uint64_t kDupSalt = 0xd0b5;
constexpr std::uint64_t kModelSalt = 0x30d3;
constexpr std::uint64_t kSubsampleSalt = 0x5b5a;
constexpr std::uint64_t kAttackSalt = 0xa77a;
constexpr std::uint64_t kRobustSalt = 0x20b5;
constexpr std::uint64_t kProbeSalt = 0xb4d;

// config errors that should surface as usage problems (exit code 2)
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::gaussian: return "gaussian";
        case ExperimentKind::image: return "image";
        case ExperimentKind::bvd: return "bvd";
    }
    return "gaussian";
}

ExperimentKind kind_from_name(const std::string& s) {
    if (s == "gaussian") return ExperimentKind::gaussian;
    if (s == "image") return ExperimentKind::image;
    if (s == "bvd") return ExperimentKind::bvd;
    throw UsageError("unknown experiment kind '" + s + "'");
}

std::string label_tag(int label) { return std::to_string(label); }

}  // namespace

std::vector<int> resolved_d_rates(const ExperimentConfig& cfg) {
    if (!cfg.d_rates.empty()) {
        std::vector<int> rates = cfg.d_rates;
        if (!std::is_sorted(rates.begin(), rates.end()))
            throw UsageError("d_rates must be sorted ascending");
        for (int r : rates)
            if (r < 0) throw UsageError("d_rates must be nonnegative");
        return rates;
    }
    std::vector<int> rates;
    const int top = cfg.experiment == ExperimentKind::image ? 100 : 90;
    for (int r = 0; r <= top; r += 10) rates.push_back(r);
    return rates;
}

// ---------------------------------------------------------------------------
// config JSON round-trip
// ---------------------------------------------------------------------------

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["experiment"] = kind_name(cfg.experiment);
    j["d_rates"] = cfg.d_rates;
    j["seeds"] = cfg.seeds;
    j["model"] = cfg.model == ModelKind::svm ? "svm" : "mlp";
    j["adversarial"] = cfg.adversarial;

    json policy;
    policy["mode"] = cfg.policy.uniform() ? "uniform" : "biased";
    json weights = json::object();
    for (const auto& [label, w] : cfg.policy.class_weights)
        weights[std::to_string(label)] = w;
    policy["weights"] = weights;
    policy["seed"] = cfg.policy.seed;
    j["policy"] = policy;

    json pgd;
    pgd["epsilon"] = cfg.pgd.epsilon;
    pgd["step_size"] = cfg.pgd.step_size;
    pgd["n_steps"] = cfg.pgd.n_steps;
    pgd["random_start"] = cfg.pgd.random_start;
    pgd["clip"] = cfg.pgd.clip_range
                      ? json{cfg.pgd.clip_range->first, cfg.pgd.clip_range->second}
                      : json(nullptr);
    pgd["seed"] = cfg.pgd.seed;
    j["pgd"] = pgd;

    json g;
    g["mu1"] = cfg.gaussian.mu1;
    g["mu2"] = cfg.gaussian.mu2;
    g["sigma"] = {{cfg.gaussian.sigma[0][0], cfg.gaussian.sigma[0][1]},
                  {cfg.gaussian.sigma[1][0], cfg.gaussian.sigma[1][1]}};
    g["n_per_class"] = cfg.gaussian.n_per_class;
    g["seed"] = cfg.gaussian.seed;
    j["gaussian"] = g;

    json img;
    img["path"] = cfg.image.path;
    img["split"] = cfg.image.split == ImageSource::Split::train ? "train" : "test";
    img["class_subset"] =
        cfg.image.class_subset ? json(*cfg.image.class_subset) : json(nullptr);
    img["max_per_class"] =
        cfg.image.max_per_class ? json(*cfg.image.max_per_class) : json(nullptr);
    img["downscale"] = cfg.image.downscale;
    img["normalize"] = cfg.image.normalize;
    j["image"] = img;

    json svm;
    svm["c"] = cfg.svm.c;
    svm["gamma"] = cfg.svm.kernel.gamma;
    svm["kkt_tol"] = cfg.svm.kkt_tol;
    svm["max_passes"] = cfg.svm.max_passes;
    svm["seed"] = cfg.svm.seed;
    j["svm"] = svm;

    json mlp;
    mlp["hidden"] = cfg.mlp.hidden;
    mlp["activation"] = cfg.mlp.activation == Activation::relu ? "relu" : "tanh";
    mlp["learning_rate"] = cfg.mlp.learning_rate;
    mlp["epochs"] = cfg.mlp.epochs;
    mlp["batch_size"] = cfg.mlp.batch_size;
    mlp["weight_init_scale"] = cfg.mlp.weight_init_scale;
    j["mlp"] = mlp;

    json bvd;
    bvd["replicates"] = cfg.bvd_replicates;
    bvd["eval_per_class"] = cfg.bvd_eval_per_class;
    j["bvd"] = bvd;

    j["test_per_class"] = cfg.test_per_class;
    j["train_per_class"] = cfg.train_per_class;
    j["out"] = cfg.out_dir;
    j["name"] = cfg.name;
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    static const std::vector<std::string> known = {
        "experiment", "d_rates", "seeds",  "model", "adversarial",
        "policy",     "pgd",     "gaussian", "image", "svm",
        "mlp",        "bvd",     "test_per_class", "train_per_class", "out", "name"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw UsageError("unknown config key '" + key + "'");
    }

    ExperimentConfig cfg;
    if (j.contains("experiment")) cfg.experiment = kind_from_name(j["experiment"]);
    if (j.contains("d_rates")) cfg.d_rates = j["d_rates"].get<std::vector<int>>();
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("model")) {
        const std::string m = j["model"];
        if (m == "svm")
            cfg.model = ModelKind::svm;
        else if (m == "mlp")
            cfg.model = ModelKind::mlp;
        else
            throw UsageError("unknown model '" + m + "'");
    }
    if (j.contains("adversarial")) cfg.adversarial = j["adversarial"].get<bool>();
    if (j.contains("policy")) {
        const json& p = j["policy"];
        if (p.contains("weights"))
            for (const auto& [key, w] : p["weights"].items())
                cfg.policy.class_weights[std::stoi(key)] = w.get<double>();
        if (p.value("mode", cfg.policy.uniform() ? "uniform" : "biased") == "uniform")
            cfg.policy.class_weights.clear();
        if (p.contains("seed")) cfg.policy.seed = p["seed"].get<std::uint64_t>();
    }
    if (j.contains("pgd")) {
        const json& p = j["pgd"];
        if (p.contains("epsilon")) cfg.pgd.epsilon = p["epsilon"].get<double>();
        if (p.contains("step_size")) cfg.pgd.step_size = p["step_size"].get<double>();
        if (p.contains("n_steps")) cfg.pgd.n_steps = p["n_steps"].get<std::size_t>();
        if (p.contains("random_start")) cfg.pgd.random_start = p["random_start"].get<bool>();
        if (p.contains("clip") && !p["clip"].is_null())
            cfg.pgd.clip_range = std::make_pair(p["clip"][0].get<double>(),
                                                p["clip"][1].get<double>());
        if (p.contains("seed")) cfg.pgd.seed = p["seed"].get<std::uint64_t>();
    }
    if (j.contains("gaussian")) {
        const json& g = j["gaussian"];
        if (g.contains("mu1")) cfg.gaussian.mu1 = g["mu1"].get<std::array<double, 2>>();
        if (g.contains("mu2")) cfg.gaussian.mu2 = g["mu2"].get<std::array<double, 2>>();
        if (g.contains("sigma")) {
            const auto rows = g["sigma"].get<std::vector<std::vector<double>>>();
            if (rows.size() != 2 || rows[0].size() != 2 || rows[1].size() != 2)
                throw UsageError("sigma must be a 2x2 matrix");
            cfg.gaussian.sigma = {{{rows[0][0], rows[0][1]}, {rows[1][0], rows[1][1]}}};
        }
        if (g.contains("n_per_class"))
            cfg.gaussian.n_per_class = g["n_per_class"].get<std::size_t>();
        if (g.contains("seed")) cfg.gaussian.seed = g["seed"].get<std::uint64_t>();
    }
    if (j.contains("image")) {
        const json& im = j["image"];
        if (im.contains("path")) cfg.image.path = im["path"].get<std::string>();
        if (im.contains("split"))
            cfg.image.split = im["split"] == "test" ? ImageSource::Split::test
                                                    : ImageSource::Split::train;
        if (im.contains("class_subset") && !im["class_subset"].is_null())
            cfg.image.class_subset = im["class_subset"].get<std::vector<int>>();
        if (im.contains("max_per_class") && !im["max_per_class"].is_null())
            cfg.image.max_per_class = im["max_per_class"].get<std::size_t>();
        if (im.contains("downscale")) cfg.image.downscale = im["downscale"].get<int>();
        if (im.contains("normalize")) cfg.image.normalize = im["normalize"].get<bool>();
    }
    if (j.contains("svm")) {
        const json& s = j["svm"];
        if (s.contains("c")) cfg.svm.c = s["c"].get<double>();
        if (s.contains("gamma")) cfg.svm.kernel.gamma = s["gamma"].get<double>();
        if (s.contains("kkt_tol")) cfg.svm.kkt_tol = s["kkt_tol"].get<double>();
        if (s.contains("max_passes")) cfg.svm.max_passes = s["max_passes"].get<std::size_t>();
        if (s.contains("seed")) cfg.svm.seed = s["seed"].get<std::uint64_t>();
    }
    if (j.contains("mlp")) {
        const json& m = j["mlp"];
        if (m.contains("hidden")) cfg.mlp.hidden = m["hidden"].get<std::vector<std::size_t>>();
        if (m.contains("activation"))
            cfg.mlp.activation = m["activation"] == "tanh" ? Activation::tanh
                                                           : Activation::relu;
        if (m.contains("learning_rate"))
            cfg.mlp.learning_rate = m["learning_rate"].get<double>();
        if (m.contains("epochs")) cfg.mlp.epochs = m["epochs"].get<std::size_t>();
        if (m.contains("batch_size")) cfg.mlp.batch_size = m["batch_size"].get<std::size_t>();
        if (m.contains("weight_init_scale"))
            cfg.mlp.weight_init_scale = m["weight_init_scale"].get<double>();
    }
    if (j.contains("bvd")) {
        const json& b = j["bvd"];
        if (b.contains("replicates")) cfg.bvd_replicates = b["replicates"].get<std::size_t>();
        if (b.contains("eval_per_class"))
            cfg.bvd_eval_per_class = b["eval_per_class"].get<std::size_t>();
    }
    if (j.contains("test_per_class"))
        cfg.test_per_class = j["test_per_class"].get<std::size_t>();
    if (j.contains("train_per_class"))
        cfg.train_per_class = j["train_per_class"].get<std::size_t>();
    if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
    if (j.contains("name")) cfg.name = j["name"].get<std::string>();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw UsageError("bad config JSON in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

std::string config_fingerprint(const ExperimentConfig& cfg) {
    const std::string dump = config_to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

namespace {

void validate_common(const ExperimentConfig& cfg) {
    if (cfg.seeds.empty()) throw UsageError("seeds must not be empty");
    if (cfg.adversarial && cfg.model == ModelKind::svm)
        throw UsageError("adversarial training requires the mlp model");
    if (cfg.experiment == ExperimentKind::gaussian && cfg.test_per_class == 0)
        throw UsageError("gaussian sweeps need test_per_class >= 1");
    resolved_d_rates(cfg);  // validates the grid
}

// d_rate grid plus a leading 0 slot for the baseline
std::vector<int> rates_with_baseline(const std::vector<int>& rates) {
    std::vector<int> all = rates;
    if (std::find(all.begin(), all.end(), 0) == all.end()) all.insert(all.begin(), 0);
    return all;
}

struct RunOutput {
    ClassAccuracy test;  // per-class and overall accuracy on the held-out set
    std::map<int, double> d_ratio;
    double repetitive_train_acc = 0.0;
    double non_repetitive_train_acc = 0.0;
    double adv_test_acc = 0.0;
    double adv_train_acc = 0.0;
    double adv_non_repetitive_train_acc = 0.0;
};

// per-class accuracy of an MLP whose labels were remapped to [0, K)
ClassAccuracy remapped_accuracy(const MlpMetrics& metrics, const std::vector<int>& labels) {
    ClassAccuracy acc;
    acc.overall = metrics.overall;
    for (const auto& [index, value] : metrics.per_class)
        acc.per_class[labels[static_cast<std::size_t>(index)]] = value;
    return acc;
}

LabeledDataset remap_labels(const LabeledDataset& dataset, const std::vector<int>& labels) {
    LabeledDataset out = dataset;
    std::map<int, int> to_index;
    for (std::size_t i = 0; i < labels.size(); ++i)
        to_index[labels[i]] = static_cast<int>(i);
    for (Sample& s : out.samples) {
        auto it = to_index.find(s.label);
        if (it == to_index.end())
            throw std::runtime_error("sample label " + std::to_string(s.label) +
                                     " not in the class subset");
        s.label = it->second;
    }
    out.class_set.clear();
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.class_set.push_back(static_cast<int>(i));
    return out;
}

}  // namespace

std::vector<SweepRecord> run_gaussian_sweep(const ExperimentConfig& cfg) {
    validate_common(cfg);
    if (cfg.experiment != ExperimentKind::gaussian)
        throw UsageError("config experiment kind is not 'gaussian'");

    const std::vector<int> rates = resolved_d_rates(cfg);
    const std::vector<int> all_rates = rates_with_baseline(rates);
    const std::size_t n_seeds = cfg.seeds.size();
    const std::string fingerprint = config_fingerprint(cfg);

    std::vector<RunOutput> outputs(n_seeds * all_rates.size());
    run_parallel(outputs.size(), default_workers(), [&](std::size_t task) {
        const std::size_t si = task / all_rates.size();
        const int d_rate = all_rates[task % all_rates.size()];
        const std::uint64_t seed = cfg.seeds[si];

        GaussianSpec train_spec = cfg.gaussian;
        train_spec.seed = mix_seed(seed, kTrainSalt);
        GaussianSpec test_spec = cfg.gaussian;
        test_spec.n_per_class = cfg.test_per_class;
        test_spec.seed = mix_seed(seed, kTestSalt);
        const LabeledDataset train = sample_gaussian(train_spec);
        const LabeledDataset test = sample_gaussian(test_spec);

        DuplicationPolicy policy = cfg.policy;
        policy.rate_percent = d_rate;
        policy.seed = mix_seed(seed, static_cast<std::uint64_t>(d_rate), kDupSalt);
        const auto [duplicated, report] = inject(train, policy);

        SvmConfig svm_cfg = cfg.svm;
        svm_cfg.seed = mix_seed(seed, static_cast<std::uint64_t>(d_rate), kModelSalt);
        const SvmModel model = train_svm(duplicated, svm_cfg);

        RunOutput& out = outputs[task];
        out.test = evaluate_per_class(model, test);
        out.d_ratio = report.d_ratio;
    });

    const std::size_t baseline_slot =
        std::find(all_rates.begin(), all_rates.end(), 0) - all_rates.begin();
    std::vector<SweepRecord> records;
    for (std::size_t si = 0; si < n_seeds; ++si) {
        const RunOutput& base = outputs[si * all_rates.size() + baseline_slot];
        for (int d_rate : rates) {
            const std::size_t slot =
                std::find(all_rates.begin(), all_rates.end(), d_rate) - all_rates.begin();
            const RunOutput& run = outputs[si * all_rates.size() + slot];
            SweepRecord rec;
            rec.experiment = "gaussian";
            rec.d_rate = d_rate;
            rec.seed = cfg.seeds[si];
            rec.class_labels = {-1, +1};
            for (int label : rec.class_labels) {
                rec.d_ratio.push_back(run.d_ratio.at(label));
                rec.acc_orig.push_back(base.test.per_class.at(label));
                rec.acc_dup.push_back(run.test.per_class.at(label));
            }
            rec.overall_orig = base.test.overall;
            rec.overall_dup = run.test.overall;
            rec.fingerprint = fingerprint;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

std::vector<SweepRecord> run_image_sweep(const ExperimentConfig& cfg) {
    validate_common(cfg);
    if (cfg.experiment != ExperimentKind::image)
        throw UsageError("config experiment kind is not 'image'");

    const std::vector<int> rates = resolved_d_rates(cfg);
    const std::vector<int> all_rates = rates_with_baseline(rates);
    const std::size_t n_seeds = cfg.seeds.size();
    const std::string fingerprint = config_fingerprint(cfg);

    ImageSource train_source = cfg.image;
    train_source.split = ImageSource::Split::train;
    ImageSource test_source = cfg.image;
    test_source.split = ImageSource::Split::test;
    const LabeledDataset train_full = load_cifar10(train_source);
    LabeledDataset test_set = load_cifar10(test_source);
    if (cfg.test_per_class > 0) {
        bool need_subsample = false;
        for (const auto& [label, count] : test_set.class_counts())
            if (count > cfg.test_per_class) need_subsample = true;
        if (need_subsample)
            test_set = subsample(test_set, cfg.test_per_class, mix_seed(0, kTestSalt));
    }

    const std::vector<int> labels = train_full.class_set;
    const std::size_t n_classes = labels.size();
    const LabeledDataset test_remapped = remap_labels(test_set, labels);

    std::vector<RunOutput> outputs(n_seeds * all_rates.size());
    run_parallel(outputs.size(), default_workers(), [&](std::size_t task) {
        const std::size_t si = task / all_rates.size();
        const int d_rate = all_rates[task % all_rates.size()];
        const std::uint64_t seed = cfg.seeds[si];

        LabeledDataset train_base =
            cfg.train_per_class > 0
                ? subsample(train_full, cfg.train_per_class, mix_seed(seed, kSubsampleSalt))
                : train_full;
        train_base = remap_labels(train_base, labels);

        DuplicationPolicy policy = cfg.policy;
        // biased policies are keyed by original labels; remap them too
        if (!policy.uniform()) {
            std::map<int, double> remapped;
            for (const auto& [label, w] : policy.class_weights) {
                const auto it = std::find(labels.begin(), labels.end(), label);
                if (it == labels.end())
                    throw UsageError("policy weight on unknown class " +
                                     std::to_string(label));
                remapped[static_cast<int>(it - labels.begin())] = w;
            }
            policy.class_weights = std::move(remapped);
        }
        policy.rate_percent = d_rate;
        policy.seed = mix_seed(seed, static_cast<std::uint64_t>(d_rate), kDupSalt);
        const auto [duplicated, report] = inject(train_base, policy);

        MlpConfig mlp_cfg;
        mlp_cfg.layer_sizes.push_back(train_base.dim());
        for (std::size_t h : cfg.mlp.hidden) mlp_cfg.layer_sizes.push_back(h);
        mlp_cfg.layer_sizes.push_back(n_classes);
        mlp_cfg.activation = cfg.mlp.activation;
        mlp_cfg.learning_rate = cfg.mlp.learning_rate;
        mlp_cfg.epochs = cfg.mlp.epochs;
        mlp_cfg.batch_size = cfg.mlp.batch_size;
        mlp_cfg.weight_init_scale = cfg.mlp.weight_init_scale;
        mlp_cfg.seed = mix_seed(seed, static_cast<std::uint64_t>(d_rate), kModelSalt);

        MlpModel model;
        if (cfg.adversarial) {
            AdvTrainConfig adv;
            adv.mlp = mlp_cfg;
            adv.attack = cfg.pgd;
            adv.attack.seed = mix_seed(seed, static_cast<std::uint64_t>(d_rate), kAttackSalt);
            model = adversarial_train(duplicated, adv).first;
        } else {
            model = train_standard(duplicated, mlp_cfg).first;
        }

        RunOutput& out = outputs[task];
        const MlpMetrics test_metrics = evaluate(model, test_remapped);
        out.test = remapped_accuracy(test_metrics, labels);
        out.d_ratio.clear();
        for (std::size_t i = 0; i < labels.size(); ++i)
            out.d_ratio[labels[i]] = report.d_ratio.at(static_cast<int>(i));
        out.repetitive_train_acc = evaluate(model, duplicated).overall;
        out.non_repetitive_train_acc =
            d_rate == 0 ? out.repetitive_train_acc : evaluate(model, train_base).overall;
        if (cfg.adversarial) {
            PgdConfig eval_attack = cfg.pgd;
            eval_attack.seed =
                mix_seed(seed, static_cast<std::uint64_t>(d_rate), kRobustSalt);
            out.adv_test_acc = robust_accuracy(model, test_remapped, eval_attack);
            eval_attack.seed =
                mix_seed(seed, static_cast<std::uint64_t>(d_rate), kRobustSalt, 1);
            out.adv_train_acc = robust_accuracy(model, duplicated, eval_attack);
            eval_attack.seed =
                mix_seed(seed, static_cast<std::uint64_t>(d_rate), kRobustSalt, 2);
            out.adv_non_repetitive_train_acc =
                robust_accuracy(model, train_base, eval_attack);
        }
    });

    const std::size_t baseline_slot =
        std::find(all_rates.begin(), all_rates.end(), 0) - all_rates.begin();
    std::vector<SweepRecord> records;
    for (std::size_t si = 0; si < n_seeds; ++si) {
        const RunOutput& base = outputs[si * all_rates.size() + baseline_slot];
        for (int d_rate : rates) {
            const std::size_t slot =
                std::find(all_rates.begin(), all_rates.end(), d_rate) - all_rates.begin();
            const RunOutput& run = outputs[si * all_rates.size() + slot];
            SweepRecord rec;
            rec.experiment = "image";
            rec.d_rate = d_rate;
            rec.seed = cfg.seeds[si];
            rec.class_labels = labels;
            for (int label : labels) {
                rec.d_ratio.push_back(run.d_ratio.at(label));
                rec.acc_orig.push_back(base.test.per_class.at(label));
                rec.acc_dup.push_back(run.test.per_class.at(label));
            }
            rec.overall_orig = base.test.overall;
            rec.overall_dup = run.test.overall;
            rec.has_image_metrics = true;
            rec.test_acc = run.test.overall;
            rec.repetitive_train_acc = run.repetitive_train_acc;
            rec.non_repetitive_train_acc = run.non_repetitive_train_acc;
            rec.has_adv_metrics = cfg.adversarial;
            rec.adv_test_acc = run.adv_test_acc;
            rec.adv_train_acc = run.adv_train_acc;
            rec.adv_non_repetitive_train_acc = run.adv_non_repetitive_train_acc;
            rec.fingerprint = fingerprint;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

std::vector<ProbeRow> run_bvd_probe(const ExperimentConfig& cfg) {
    std::vector<ProbeRow> rows;
    for (auto& [seed, row] : run_bvd_probe_rows(cfg)) {
        (void)seed;
        rows.push_back(row);
    }
    return rows;
}

std::vector<std::pair<std::uint64_t, ProbeRow>> run_bvd_probe_rows(
    const ExperimentConfig& cfg) {
    validate_common(cfg);
    if (cfg.experiment != ExperimentKind::bvd)
        throw UsageError("config experiment kind is not 'bvd'");

    const std::vector<int> rates = resolved_d_rates(cfg);
    std::vector<DuplicationPolicy> policies;
    for (int rate : rates) {
        DuplicationPolicy p = cfg.policy;
        p.rate_percent = rate;
        policies.push_back(std::move(p));
    }

    DatasetScoreTrainer trainer;
    if (cfg.model == ModelKind::svm) {
        const SvmConfig svm_cfg = cfg.svm;
        trainer = [svm_cfg](const LabeledDataset& data) -> Predictor {
            const SvmModel model = train_svm(data, svm_cfg);
            return [model](std::span<const double> x) { return decision_value(model, x); };
        };
    } else {
        const MlpSettings settings = cfg.mlp;
        trainer = [settings](const LabeledDataset& data) -> Predictor {
            // labels -1/+1 map to indices 0/1; the score is the +1 logit margin
            LabeledDataset remapped = data;
            for (Sample& s : remapped.samples) s.label = s.label == +1 ? 1 : 0;
            remapped.class_set = {0, 1};
            MlpConfig mlp_cfg;
            mlp_cfg.layer_sizes.push_back(data.dim());
            for (std::size_t h : settings.hidden) mlp_cfg.layer_sizes.push_back(h);
            mlp_cfg.layer_sizes.push_back(2);
            mlp_cfg.activation = settings.activation;
            mlp_cfg.learning_rate = settings.learning_rate;
            mlp_cfg.epochs = settings.epochs;
            mlp_cfg.batch_size = settings.batch_size;
            mlp_cfg.weight_init_scale = settings.weight_init_scale;
            mlp_cfg.seed = data.seed.value_or(0);
            const MlpModel model = train_standard(remapped, mlp_cfg).first;
            return [model](std::span<const double> x) {
                const std::vector<double> z = logits(model, x);
                return z[1] - z[0];
            };
        };
    }

    std::vector<std::pair<std::uint64_t, ProbeRow>> rows;
    for (std::uint64_t seed : cfg.seeds) {
        ProbeConfig pc;
        pc.replicates = cfg.bvd_replicates;
        pc.eval_per_class = cfg.bvd_eval_per_class;
        pc.seed = mix_seed(seed, kProbeSalt);
        pc.n_workers = default_workers();
        for (const ProbeRow& row : duplication_bias_probe(cfg.gaussian, policies, trainer, pc))
            rows.emplace_back(seed, row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

void emit_csv(const std::vector<SweepRecord>& records, const std::string& path) {
    std::vector<SweepRecord> sorted = records;
    std::sort(sorted.begin(), sorted.end(), [](const SweepRecord& a, const SweepRecord& b) {
        if (a.d_rate != b.d_rate) return a.d_rate < b.d_rate;
        return a.seed < b.seed;
    });

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);

    out << "experiment,d_rate,seed,fingerprint";
    if (!sorted.empty()) {
        const SweepRecord& first = sorted.front();
        for (int label : first.class_labels) out << ",d_ratio_" << label_tag(label);
        for (int label : first.class_labels) out << ",acc_orig_" << label_tag(label);
        for (int label : first.class_labels) out << ",acc_dup_" << label_tag(label);
    }
    out << ",overall_orig,overall_dup";
    const bool image_cols = !sorted.empty() && sorted.front().has_image_metrics;
    if (image_cols)
        out << ",test_acc,repetitive_train_acc,non_repetitive_train_acc"
            << ",adv_test_acc,adv_train_acc,adv_non_repetitive_train_acc";
    out << "\n";

    for (const SweepRecord& rec : sorted) {
        out << rec.experiment << ',' << rec.d_rate << ',' << rec.seed << ','
            << rec.fingerprint;
        for (double v : rec.d_ratio) out << ',' << format_double(v);
        for (double v : rec.acc_orig) out << ',' << format_double(v);
        for (double v : rec.acc_dup) out << ',' << format_double(v);
        out << ',' << format_double(rec.overall_orig) << ','
            << format_double(rec.overall_dup);
        if (image_cols) {
            out << ',' << format_double(rec.test_acc) << ','
                << format_double(rec.repetitive_train_acc) << ','
                << format_double(rec.non_repetitive_train_acc);
            if (rec.has_adv_metrics)
                out << ',' << format_double(rec.adv_test_acc) << ','
                    << format_double(rec.adv_train_acc) << ','
                    << format_double(rec.adv_non_repetitive_train_acc);
            else
                out << ",,,";
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void emit_probe_csv(const std::vector<std::pair<std::uint64_t, ProbeRow>>& rows,
                    const std::string& fingerprint, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "experiment,seed,policy_index,d_rate,label,bias_sq,variance,signed_bias,"
           "se_bias_sq,se_variance,se_signed_bias,replicates,fingerprint\n";
    for (const auto& [seed, row] : rows) {
        out << "bvd," << seed << ',' << row.policy_index << ',' << row.rate_percent << ','
            << row.label << ',' << format_double(row.bias_sq) << ','
            << format_double(row.variance) << ',' << format_double(row.signed_bias) << ','
            << format_double(row.se_bias_sq) << ',' << format_double(row.se_variance) << ','
            << format_double(row.se_signed_bias) << ',' << row.replicates << ','
            << fingerprint << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void emit_probe_csv(const std::vector<ProbeRow>& rows, const std::string& fingerprint,
                    const std::string& path) {
    std::vector<std::pair<std::uint64_t, ProbeRow>> tagged;
    for (const ProbeRow& row : rows) tagged.emplace_back(0, row);
    emit_probe_csv(tagged, fingerprint, path);
}

// ---------------------------------------------------------------------------
// experiment driver + CLI
// ---------------------------------------------------------------------------

std::string run_experiment(const ExperimentConfig& cfg) {
    validate_common(cfg);
    fs::create_directories(cfg.out_dir);
    const std::string stem = cfg.name.empty() ? kind_name(cfg.experiment) : cfg.name;
    const std::string csv_path = (fs::path(cfg.out_dir) / (stem + ".csv")).string();
    const std::string sidecar_path =
        (fs::path(cfg.out_dir) / (stem + "_config.json")).string();

    {
        std::ofstream side(sidecar_path, std::ios::binary);
        if (!side) throw std::runtime_error("cannot write " + sidecar_path);
        side << config_to_json(cfg).dump(2) << "\n";
    }

    switch (cfg.experiment) {
        case ExperimentKind::gaussian:
            emit_csv(run_gaussian_sweep(cfg), csv_path);
            break;
        case ExperimentKind::image:
            emit_csv(run_image_sweep(cfg), csv_path);
            break;
        case ExperimentKind::bvd:
            emit_probe_csv(run_bvd_probe_rows(cfg), config_fingerprint(cfg), csv_path);
            break;
    }
    return csv_path;
}

namespace {

DuplicationPolicy parse_policy(const std::string& text) {
    DuplicationPolicy policy;
    if (text == "uniform") return policy;
    const std::string prefix = "biased:";
    if (text.rfind(prefix, 0) != 0)
        throw UsageError("policy must be 'uniform' or 'biased:<label>=<w>,...'");
    std::stringstream ss(text.substr(prefix.size()));
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos)
            throw UsageError("bad policy term '" + part + "', expected <label>=<weight>");
        try {
            policy.class_weights[std::stoi(part.substr(0, eq))] =
                std::stod(part.substr(eq + 1));
        } catch (const std::exception&) {
            throw UsageError("bad policy term '" + part + "'");
        }
    }
    if (policy.class_weights.empty()) throw UsageError("biased policy needs weights");
    return policy;
}

struct CliState {
    std::string config_path;
    std::vector<int> d_rates;
    std::vector<std::uint64_t> seeds;
    std::string policy_text;
    std::string out_dir;
    std::string name;
    std::string data_path;
    std::vector<int> classes;
    std::size_t per_class = 0;
    std::size_t test_per_class = 0;
    int downscale = 0;
    std::size_t n_per_class = 0;
    double svm_c = 0.0;
    double gamma = 0.0;
    bool adv = false;
    double epsilon = -1.0;
    std::size_t pgd_steps = 0;
    double pgd_step_size = 0.0;
    int random_start = -1;
    std::vector<double> clip;
    std::size_t epochs = 0;
    double lr = 0.0;
    std::size_t batch = 0;
    std::vector<std::size_t> hidden;
    std::string model;
    std::size_t replicates = 0;
    std::size_t eval_per_class = 0;
};

// count() throws on options the subcommand never registered
bool given(const CLI::App* sub, const std::string& name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

void add_common_options(CLI::App* sub, CliState& st) {
    sub->add_option("--config", st.config_path, "JSON config file; flags override it");
    sub->add_option("--d-rates", st.d_rates, "duplication rates in percent")
        ->delimiter(',');
    sub->add_option("--seeds", st.seeds, "sweep seeds")->delimiter(',');
    sub->add_option("--policy", st.policy_text,
                    "uniform | biased:<label>=<w>,... selection policy");
    sub->add_option("--out", st.out_dir, "output directory");
    sub->add_option("--name", st.name, "output file stem");
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"duplicate-injection experiments for classifiers"};
    app.require_subcommand(1);
    CliState st;

    CLI::App* gaussian = app.add_subcommand(
        "gaussian", "SVM duplication sweep on two-Gaussian data");
    add_common_options(gaussian, st);
    gaussian->add_option("--n-per-class", st.n_per_class, "training samples per class");
    gaussian->add_option("--test-per-class", st.test_per_class, "held-out samples per class");
    gaussian->add_option("--svm-c", st.svm_c, "SVM regularization C");
    gaussian->add_option("--gamma", st.gamma, "RBF gamma (0 = scale-aware default)");

    CLI::App* image = app.add_subcommand(
        "image", "classifier duplication sweep on CIFAR-10 binary batches");
    add_common_options(image, st);
    image->add_option("--data", st.data_path, "directory with CIFAR-10 binary batches");
    image->add_option("--classes", st.classes, "class subset, e.g. 0,1")->delimiter(',');
    image->add_option("--per-class", st.per_class, "training images subsampled per class");
    image->add_option("--test-per-class", st.test_per_class, "test images per class");
    image->add_option("--downscale", st.downscale, "block-mean downscale factor (1,2,4,8)");
    image->add_flag("--adv", st.adv, "train adversarially");
    image->add_option("--epsilon", st.epsilon, "l2 attack radius");
    image->add_option("--pgd-steps", st.pgd_steps, "attack iterations");
    image->add_option("--pgd-step-size", st.pgd_step_size, "attack step size");
    image->add_option("--random-start", st.random_start, "1 = random start inside the ball");
    image->add_option("--clip", st.clip, "feature box lo,hi")->delimiter(',')->expected(2);
    image->add_option("--epochs", st.epochs, "training epochs");
    image->add_option("--lr", st.lr, "learning rate");
    image->add_option("--batch", st.batch, "minibatch size");
    image->add_option("--hidden", st.hidden, "hidden layer sizes")->delimiter(',');

    CLI::App* bvd = app.add_subcommand(
        "bvd", "bias/variance probe over a duplication policy grid");
    add_common_options(bvd, st);
    bvd->add_option("--model", st.model, "svm | mlp");
    bvd->add_option("--replicates", st.replicates, "training replicates per policy");
    bvd->add_option("--eval-per-class", st.eval_per_class, "eval points per class");
    bvd->add_option("--n-per-class", st.n_per_class, "training samples per class");
    bvd->add_option("--svm-c", st.svm_c, "SVM regularization C");
    bvd->add_option("--gamma", st.gamma, "RBF gamma (0 = scale-aware default)");

    CLI::App* dedup = app.add_subcommand("dedup", "remove exact duplicates from a dataset CSV");
    std::string dedup_in, dedup_out;
    dedup->add_option("--in", dedup_in, "input dataset CSV")->required();
    dedup->add_option("--out", dedup_out, "output dataset CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            app.exit(e);
            return 0;
        }
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        if (dedup->parsed()) {
            const LabeledDataset data = load_csv(dedup_in);
            save_csv(dedup_exact(data), dedup_out);
            std::printf("%s\n", dedup_out.c_str());
            return 0;
        }

        ExperimentConfig cfg;
        if (!st.config_path.empty()) cfg = load_config(st.config_path);

        CLI::App* sub = gaussian->parsed() ? gaussian : image->parsed() ? image : bvd;
        cfg.experiment = gaussian->parsed()   ? ExperimentKind::gaussian
                         : image->parsed()    ? ExperimentKind::image
                                              : ExperimentKind::bvd;
        if (cfg.experiment == ExperimentKind::gaussian) cfg.model = ModelKind::svm;
        if (cfg.experiment == ExperimentKind::image) cfg.model = ModelKind::mlp;

        if (given(sub, "--d-rates")) cfg.d_rates = st.d_rates;
        if (given(sub, "--seeds")) cfg.seeds = st.seeds;
        if (given(sub, "--policy")) {
            const std::uint64_t keep_seed = cfg.policy.seed;
            cfg.policy = parse_policy(st.policy_text);
            cfg.policy.seed = keep_seed;
        }
        if (given(sub, "--out")) cfg.out_dir = st.out_dir;
        if (given(sub, "--name")) cfg.name = st.name;
        if (given(sub, "--test-per-class")) cfg.test_per_class = st.test_per_class;
        if (given(sub, "--n-per-class")) cfg.gaussian.n_per_class = st.n_per_class;
        if (given(sub, "--svm-c")) cfg.svm.c = st.svm_c;
        if (given(sub, "--gamma")) cfg.svm.kernel.gamma = st.gamma;

        if (image->parsed()) {
            if (given(image, "--data")) cfg.image.path = st.data_path;
            if (given(image, "--classes")) cfg.image.class_subset = st.classes;
            if (given(image, "--per-class")) cfg.train_per_class = st.per_class;
            if (given(image, "--downscale")) cfg.image.downscale = st.downscale;
            if (given(image, "--adv")) cfg.adversarial = true;
            if (given(image, "--epsilon")) cfg.pgd.epsilon = st.epsilon;
            if (given(image, "--pgd-steps")) cfg.pgd.n_steps = st.pgd_steps;
            if (given(image, "--pgd-step-size")) cfg.pgd.step_size = st.pgd_step_size;
            if (given(image, "--random-start")) cfg.pgd.random_start = st.random_start != 0;
            if (given(image, "--clip")) cfg.pgd.clip_range = {st.clip[0], st.clip[1]};
            if (given(image, "--epochs")) cfg.mlp.epochs = st.epochs;
            if (given(image, "--lr")) cfg.mlp.learning_rate = st.lr;
            if (given(image, "--batch")) cfg.mlp.batch_size = st.batch;
            if (given(image, "--hidden")) cfg.mlp.hidden = st.hidden;
            if (cfg.image.path.empty())
                throw UsageError("image runs need --data or a config image.path");
        }
        if (bvd->parsed()) {
            if (given(bvd, "--model")) {
                if (st.model == "svm")
                    cfg.model = ModelKind::svm;
                else if (st.model == "mlp")
                    cfg.model = ModelKind::mlp;
                else
                    throw UsageError("unknown model '" + st.model + "'");
            }
            if (given(bvd, "--replicates")) cfg.bvd_replicates = st.replicates;
            if (given(bvd, "--eval-per-class")) cfg.bvd_eval_per_class = st.eval_per_class;
        }

        validate_common(cfg);
        const std::string csv = run_experiment(cfg);
        std::printf("%s\n", csv.c_str());
        return 0;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace duplab
