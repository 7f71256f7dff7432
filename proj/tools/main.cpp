#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "fetalseg/augment.hpp"
#include "fetalseg/data.hpp"
#include "fetalseg/embed.hpp"
#include "fetalseg/harness.hpp"
#include "fetalseg/model.hpp"
#include "fetalseg/svg.hpp"
#include "fetalseg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fetalseg;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

void read_pair(const json& j, const char* key, double out[2]) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw std::invalid_argument(std::string("config: ") + key + " must be [lo, hi]");
    out[0] = v[0].get<double>();
    out[1] = v[1].get<double>();
}

AugmentationConfig augmentation_from_json(const json& j) {
    reject_unknown(j,
                   {"brightness", "contrast", "quality", "speckle_std", "shadow_width", "shadow_angle_deg",
                    "shadow_strength", "shadow_blur_sigma", "zoom", "rotate_deg", "translate_px", "shear",
                    "motion_blur_len", "elastic_sigma", "elastic_alpha", "probabilities"},
                   "augmentation");
    AugmentationConfig c;
    read_pair(j, "brightness", c.brightness);
    read_pair(j, "contrast", c.contrast);
    read_pair(j, "quality", c.quality);
    read_pair(j, "shadow_width", c.shadow_width);
    read_pair(j, "shadow_angle_deg", c.shadow_angle_deg);
    read_pair(j, "zoom", c.zoom);
    read_pair(j, "rotate_deg", c.rotate_deg);
    read_pair(j, "translate_px", c.translate_px);
    read_pair(j, "shear", c.shear);
    c.speckle_std = j.value("speckle_std", c.speckle_std);
    c.shadow_strength = j.value("shadow_strength", c.shadow_strength);
    c.shadow_blur_sigma = j.value("shadow_blur_sigma", c.shadow_blur_sigma);
    c.motion_blur_len = j.value("motion_blur_len", c.motion_blur_len);
    c.elastic_sigma = j.value("elastic_sigma", c.elastic_sigma);
    c.elastic_alpha = j.value("elastic_alpha", c.elastic_alpha);
    if (j.contains("probabilities")) {
        const auto& p = j.at("probabilities");
        reject_unknown(p, {"affine", "elastic", "shadow", "motion_blur", "quality", "color_jitter", "speckle"},
                       "augmentation.probabilities");
        c.prob.affine = p.value("affine", c.prob.affine);
        c.prob.elastic = p.value("elastic", c.prob.elastic);
        c.prob.shadow = p.value("shadow", c.prob.shadow);
        c.prob.motion_blur = p.value("motion_blur", c.prob.motion_blur);
        c.prob.quality = p.value("quality", c.prob.quality);
        c.prob.color_jitter = p.value("color_jitter", c.prob.color_jitter);
        c.prob.speckle = p.value("speckle", c.prob.speckle);
    }
    c.validate();
    return c;
}

TrainConfig train_from_json(const json& j) {
    reject_unknown(j, {"learning_rate", "batch_size", "beta1", "beta2", "adam_eps", "max_epochs", "augment"},
                   "train");
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.augment = j.value("augment", c.augment);
    return c;
}

EmbeddingConfig embedding_from_json(const json& j) {
    reject_unknown(j, {"n_neighbors", "min_dist", "epochs", "negative_sample_rate"}, "embedding");
    EmbeddingConfig c;
    c.n_neighbors = j.value("n_neighbors", c.n_neighbors);
    c.min_dist = j.value("min_dist", c.min_dist);
    c.epochs = j.value("epochs", c.epochs);
    c.negative_sample_rate = j.value("negative_sample_rate", c.negative_sample_rate);
    return c;
}

// Aggregated run configuration; every section is schema-checked up front.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir;
    ModelConfig model;
    TrainConfig train;
    AugmentationConfig augmentation;
    EmbeddingConfig embedding;
    std::string train_manifest;
    std::string test_manifest;

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw LoadError("config: cannot open " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw std::invalid_argument("config: invalid JSON in " + path + ": " + e.what());
        }
        reject_unknown(j, {"seed", "out_dir", "model", "train", "augmentation", "embedding", "manifests"}, "top level");
        RunConfig c;
        c.seed = j.value("seed", 0ULL);
        c.out_dir = j.value("out_dir", std::string());
        if (j.contains("model")) c.model = model_config_from_json(j.at("model").dump());
        if (j.contains("train")) c.train = train_from_json(j.at("train"));
        if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j.at("augmentation"));
        if (j.contains("embedding")) c.embedding = embedding_from_json(j.at("embedding"));
        if (j.contains("manifests")) {
            const auto& m = j.at("manifests");
            reject_unknown(m, {"train", "test"}, "manifests");
            c.train_manifest = m.value("train", std::string());
            c.test_manifest = m.value("test", std::string());
        }
        return c;
    }
};

std::string timestamp_name(const std::string& subcommand) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return subcommand + "-" + buf;
}

struct RunDir {
    fs::path path;
    std::vector<std::string> artifacts;

    fs::path file(const std::string& name) {
        artifacts.push_back(name);
        return path / name;
    }

    void finalize(const std::string& subcommand, std::uint64_t seed, const json& effective_config) {
        std::sort(artifacts.begin(), artifacts.end());
        json j{{"subcommand", subcommand}, {"seed", seed}, {"config", effective_config}, {"artifacts", artifacts}};
        std::ofstream out(path / "run.json");
        out << j.dump(2) << '\n';
    }
};

RunDir make_run_dir(const std::string& out_flag, const std::string& run_name, const std::string& subcommand) {
    std::string base = out_flag;
    if (base.empty()) {
        if (const char* env = std::getenv("FETALSEG_OUT")) base = env;
    }
    if (base.empty()) base = "runs";
    RunDir rd;
    rd.path = fs::path(base) / (run_name.empty() ? timestamp_name(subcommand) : run_name);
    fs::create_directories(rd.path);
    return rd;
}

std::vector<Sample> load_split_samples(const Manifest& manifest, const std::string& split) {
    std::vector<Sample> out;
    for (const auto& r : manifest.records)
        if (r.split == split) out.push_back(load_sample(r));
    return out;
}

NamedTestSets load_test_sets(const Manifest& manifest) {
    std::set<std::string> names;
    for (const auto& r : manifest.records)
        if (r.split.rfind("test", 0) == 0) names.insert(r.split);
    NamedTestSets out;
    for (const auto& name : names) out.emplace_back(name, load_split_samples(manifest, name));
    return out;
}

json train_config_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"beta1", c.beta1},
                {"beta2", c.beta2},                 {"adam_eps", c.adam_eps},     {"max_epochs", c.max_epochs},
                {"augment", c.augment}};
}

// ---- subcommand implementations ---------------------------------------------

int cmd_phantom(const RunConfig& cfg, const std::string& out_flag, const std::string& run_name, int count,
                const std::vector<std::string>& devices, const std::vector<std::string>& planes,
                const std::string& registry_path, const std::string& split, double val_fraction) {
    if (count < 1) throw std::invalid_argument("phantom: --count must be >= 1");
    DeviceRegistry registry = registry_path.empty() ? default_device_registry() : load_device_registry(registry_path);
    std::vector<std::string> device_names = devices;
    if (device_names.empty())
        for (const auto& [name, unused] : registry) device_names.push_back(name);
    for (const auto& d : device_names)
        if (!registry.count(d)) throw std::invalid_argument("phantom: unknown device profile '" + d + "'");

    RunDir rd = make_run_dir(out_flag, run_name, "phantom");
    fs::create_directories(rd.path / "images");
    fs::create_directories(rd.path / "masks");

    Manifest manifest;
    for (const auto& device : device_names) {
        for (const auto& plane_str : planes) {
            const Plane plane = plane_from_string(plane_str);
            auto samples = phantom_generate(count, plane, device, registry.at(device), cfg.seed);
            for (auto& s : samples) {
                const std::string img_rel = "images/" + s.id + ".png";
                const std::string msk_rel = "masks/" + s.id + ".png";
                save_sample(s, (rd.path / img_rel).string(), (rd.path / msk_rel).string());
                ManifestRecord r;
                r.image_path = (rd.path / img_rel).string();
                r.mask_path = (rd.path / msk_rel).string();
                r.plane = plane;
                r.device = device;
                r.center = s.center;
                r.subject_id = s.subject_id;
                r.split = split;
                manifest.records.push_back(std::move(r));
            }
        }
    }
    if (split == "train" && val_fraction > 0.0)
        manifest = split_train_val(manifest, 1.0 - val_fraction, cfg.seed);
    manifest.validate();
    manifest.save_csv((rd.path / "manifest.csv").string());
    rd.artifacts.push_back("manifest.csv");
    save_device_registry(registry, (rd.path / "device_registry.json").string());
    rd.artifacts.push_back("device_registry.json");
    rd.finalize("phantom", cfg.seed,
                json{{"count", count}, {"devices", device_names}, {"planes", planes}, {"split", split},
                     {"val_fraction", val_fraction}});
    std::cout << rd.path.string() << '\n';
    return 0;
}

int cmd_augment(const RunConfig& cfg, const std::string& out_flag, const std::string& run_name,
                const std::string& manifest_path, int epoch) {
    if (manifest_path.empty()) throw std::invalid_argument("augment: --manifest is required");
    Manifest manifest = Manifest::load_csv(manifest_path);
    RunDir rd = make_run_dir(out_flag, run_name, "augment");
    fs::create_directories(rd.path / "images");
    fs::create_directories(rd.path / "masks");
    std::ofstream audit(rd.path / "audit.jsonl");
    rd.artifacts.push_back("audit.jsonl");

    Manifest out_manifest;
    for (const auto& record : manifest.records) {
        Sample s = load_sample(record);
        SampleAudit sa;
        Sample aug = apply_pipeline(s, cfg.augmentation, cfg.seed, epoch, &sa);
        audit << audit_to_json(sa) << '\n';
        const std::string stem = fs::path(record.image_path).stem().string();
        const std::string img_rel = "images/" + stem + "_aug.png";
        const std::string msk_rel = "masks/" + stem + "_aug.png";
        save_sample(aug, (rd.path / img_rel).string(), (rd.path / msk_rel).string());
        ManifestRecord r = record;
        r.image_path = (rd.path / img_rel).string();
        r.mask_path = (rd.path / msk_rel).string();
        out_manifest.records.push_back(std::move(r));
    }
    out_manifest.save_csv((rd.path / "manifest.csv").string());
    rd.artifacts.push_back("manifest.csv");
    rd.finalize("augment", cfg.seed, json{{"manifest", manifest_path}, {"epoch", epoch}});
    std::cout << rd.path.string() << '\n';
    return 0;
}

int cmd_train(RunConfig cfg, const std::string& out_flag, const std::string& run_name,
              const std::string& manifest_path, const std::string& arm) {
    if (manifest_path.empty()) throw std::invalid_argument("train: --manifest is required");
    if (arm != "da" && arm != "noda") throw std::invalid_argument("train: --arm must be da or noda");
    Manifest manifest = Manifest::load_csv(manifest_path);
    manifest.validate();
    auto train_set = load_split_samples(manifest, "train");
    auto val_set = load_split_samples(manifest, "val");

    RunDir rd = make_run_dir(out_flag, run_name, "train");
    cfg.train.augment = (arm == "da");
    cfg.train.seed = cfg.seed;
    cfg.train.audit_path = rd.file("train_audit.jsonl").string();

    SegNet<float> model = build_model<float>(cfg.model, cfg.seed);
    const TrainResult result = train(model, train_set, val_set, cfg.train);
    write_training_log_csv(result.log, rd.file("training_log.csv").string());
    CheckpointMeta meta{cfg.seed, result.steps, result.best_val_loss};
    save_checkpoint(model, meta, rd.file("best.ckpt").string());
    rd.finalize("train", cfg.seed,
                json{{"manifest", manifest_path}, {"arm", arm}, {"train", train_config_json(cfg.train)},
                     {"model", json::parse(model_config_to_json(cfg.model))}});
    std::cout << rd.path.string() << "\nbest_epoch=" << result.best_epoch << " best_val_loss=" << result.best_val_loss
              << '\n';
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& out_flag, const std::string& run_name,
             const std::string& checkpoint_path, const std::string& manifest_path, const std::string& arm) {
    if (checkpoint_path.empty() || manifest_path.empty())
        throw std::invalid_argument("eval: --checkpoint and --manifest are required");
    SegNet<float> model = load_checkpoint(checkpoint_path);
    Manifest manifest = Manifest::load_csv(manifest_path);
    auto test_sets = load_test_sets(manifest);
    if (test_sets.empty()) throw std::invalid_argument("eval: manifest has no test records");

    RunDir rd = make_run_dir(out_flag, run_name, "eval");
    DiceReport report;
    for (const auto& [name, samples] : test_sets) {
        const EvalSummary s = evaluate(model, samples);
        report.add_summary(s, name, arm, 1.0, -1);
        std::cout << name << " mean_dice=" << s.mean_dice << '\n';
    }
    report.save_csv(rd.file("dice_report.csv").string());
    rd.finalize("eval", cfg.seed, json{{"checkpoint", checkpoint_path}, {"manifest", manifest_path}, {"arm", arm}});
    std::cout << rd.path.string() << '\n';
    return 0;
}

int cmd_ablate(RunConfig cfg, const std::string& out_flag, const std::string& run_name,
               const std::string& manifest_path, const std::vector<double>& fractions,
               const std::vector<std::string>& arms) {
    if (manifest_path.empty()) throw std::invalid_argument("ablate: --manifest is required");
    Manifest manifest = Manifest::load_csv(manifest_path);
    manifest.validate();
    auto train_set = load_split_samples(manifest, "train");
    auto val_set = load_split_samples(manifest, "val");
    auto test_sets = load_test_sets(manifest);
    if (test_sets.empty()) throw std::invalid_argument("ablate: manifest has no test records");

    RunDir rd = make_run_dir(out_flag, run_name, "ablate");
    fs::create_directories(rd.path / "checkpoints");
    AblateOptions options;
    if (!fractions.empty()) options.fractions = fractions;
    if (!arms.empty()) options.arms = arms;
    options.checkpoint_dir = (rd.path / "checkpoints").string();
    cfg.train.seed = cfg.seed;
    const DiceReport report = ablate_fractions(cfg.model, cfg.train, train_set, val_set, test_sets, options);
    report.save_csv(rd.file("ablate_report.csv").string());
    rd.finalize("ablate", cfg.seed,
                json{{"manifest", manifest_path}, {"fractions", options.fractions}, {"arms", options.arms}});
    std::cout << rd.path.string() << '\n';
    return 0;
}

int cmd_cv(RunConfig cfg, const std::string& out_flag, const std::string& run_name, const std::string& manifest_path,
           int folds, const std::string& arm) {
    if (manifest_path.empty()) throw std::invalid_argument("cv: --manifest is required");
    Manifest manifest = Manifest::load_csv(manifest_path);
    std::vector<Sample> samples;
    for (const auto& r : manifest.records)
        if (r.split == "train" || r.split == "val") samples.push_back(load_sample(r));
    if (samples.empty()) throw std::invalid_argument("cv: manifest has no train/val records");

    RunDir rd = make_run_dir(out_flag, run_name, "cv");
    cfg.train.seed = cfg.seed;
    cfg.train.augment = (arm == "da");
    const CvSummary summary = cross_validate(cfg.model, cfg.train, samples, folds);
    summary.report.save_csv(rd.file("cv_report.csv").string());
    rd.finalize("cv", cfg.seed, json{{"manifest", manifest_path}, {"folds", folds}, {"arm", arm}});
    std::cout << "cv mean=" << summary.mean << " std=" << summary.stddev << '\n' << rd.path.string() << '\n';
    return 0;
}

int cmd_embed(RunConfig cfg, const std::string& out_flag, const std::string& run_name,
              const std::string& manifest_path, const std::string& plane_str, std::string out_svg,
              std::string out_csv) {
    if (manifest_path.empty()) throw std::invalid_argument("embed: --manifest is required");
    const Plane plane = plane_from_string(plane_str);
    Manifest manifest = Manifest::load_csv(manifest_path);

    std::vector<Sample> samples;
    for (const auto& r : manifest.records)
        if (r.plane == plane) samples.push_back(load_sample(r));
    if (static_cast<int>(samples.size()) <= cfg.embedding.n_neighbors)
        throw std::invalid_argument("embed: need more samples than n_neighbors");

    std::vector<std::vector<float>> features;
    features.reserve(samples.size());
    for (const auto& s : samples) features.push_back(embedding_features(s.image));

    cfg.embedding.seed = cfg.seed;
    const KnnGraph graph = knn_graph(features, cfg.embedding.n_neighbors);
    const FuzzyGraph fuzzy = fuzzy_union(graph);
    const auto coords = layout_2d(fuzzy, cfg.embedding);

    std::vector<EmbeddingPoint> points;
    std::vector<std::string> labels;
    for (size_t i = 0; i < samples.size(); ++i) {
        points.push_back({coords[i].x, coords[i].y, samples[i].device, samples[i].plane, samples[i].id});
        labels.push_back(samples[i].device);
    }

    RunDir rd = make_run_dir(out_flag, run_name, "embed");
    if (out_svg.empty()) out_svg = rd.file("embedding.svg").string();
    if (out_csv.empty()) out_csv = rd.file("embedding.csv").string();
    export_plot(points, out_svg, out_csv);

    std::set<std::string> distinct(labels.begin(), labels.end());
    if (distinct.size() >= 2) {
        const ClusterReport rep = cluster_metrics(coords, labels);
        std::cout << "silhouette=" << rep.silhouette << " knn_purity=" << rep.knn_purity << '\n';
    }
    rd.finalize("embed", cfg.seed,
                json{{"manifest", manifest_path}, {"plane", plane_str}, {"n_neighbors", cfg.embedding.n_neighbors},
                     {"min_dist", cfg.embedding.min_dist}, {"epochs", cfg.embedding.epochs}});
    std::cout << rd.path.string() << '\n';
    return 0;
}

int cmd_report(const RunConfig& cfg, const std::string& out_flag, const std::string& run_name,
               const std::string& input_csv) {
    if (input_csv.empty()) throw std::invalid_argument("report: --input is required");
    const DiceReport report = DiceReport::load_csv(input_csv);
    RunDir rd = make_run_dir(out_flag, run_name, "report");
    svg::write_dice_bar_chart(report, rd.file("dice_bars.svg").string());
    svg::write_dice_radial_chart(report, rd.file("dice_radial.svg").string());
    rd.finalize("report", cfg.seed, json{{"input", input_csv}});
    std::cout << rd.path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fetal brain ultrasound segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, run_name;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 1;
    app.add_option("--config", config_path, "JSON run configuration (flags override it)");
    app.add_option("--out", out_dir, "output directory (default: $FETALSEG_OUT or ./runs)");
    app.add_option("--run-name", run_name, "run directory name (default: <subcommand>-<timestamp>)");
    app.add_option("--seed", seed, "root seed for all randomness")->each([&seed_given](const std::string&) {
        seed_given = true;
    });
    app.add_option("--threads", threads, "worker-thread cap; results are identical for any value")
        ->check(CLI::PositiveNumber);

    auto* phantom = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
    int ph_count = 0;
    std::vector<std::string> ph_devices, ph_planes = {"tv", "tc"};
    std::string ph_registry, ph_split = "train";
    double ph_val_fraction = 0.103;
    phantom->add_option("--count", ph_count, "samples per device per plane")->required();
    phantom->add_option("--devices", ph_devices, "device profiles (default: all registry entries)")->delimiter(',');
    phantom->add_option("--planes", ph_planes, "planes to render: tv, tc")->delimiter(',');
    phantom->add_option("--registry", ph_registry, "device profile registry JSON (default: built-in)");
    phantom->add_option("--split", ph_split, "split label for generated records");
    phantom->add_option("--val-fraction", ph_val_fraction,
                        "subject fraction moved to val when --split train (0 disables)");

    auto* augment = app.add_subcommand("augment", "batch-apply the augmentation pipeline with an audit sidecar");
    std::string aug_manifest;
    int aug_epoch = 0;
    augment->add_option("--manifest", aug_manifest, "input manifest CSV")->required();
    augment->add_option("--epoch", aug_epoch, "epoch index mixed into per-sample seeds");

    auto* train_cmd = app.add_subcommand("train", "train a model and keep the best-validation checkpoint");
    std::string tr_manifest, tr_arm = "da";
    double tr_scale = 0.0, tr_lr = 0.0;
    int tr_epochs = 0, tr_batch = 0;
    train_cmd->add_option("--manifest", tr_manifest, "manifest with train and val splits")->required();
    train_cmd->add_option("--arm", tr_arm, "augmentation arm: da | noda");
    train_cmd->add_option("--scale", tr_scale, "channel-width multiplier override");
    train_cmd->add_option("--epochs", tr_epochs, "max epochs override");
    train_cmd->add_option("--batch-size", tr_batch, "mini-batch size override");
    train_cmd->add_option("--lr", tr_lr, "learning rate override");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on every test split of a manifest");
    std::string ev_checkpoint, ev_manifest, ev_arm = "da";
    eval_cmd->add_option("--checkpoint", ev_checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--manifest", ev_manifest, "manifest with test records")->required();
    eval_cmd->add_option("--arm", ev_arm, "arm label recorded in the report");

    auto* ablate = app.add_subcommand("ablate", "training-set fraction ablation across augmentation arms");
    std::string ab_manifest;
    std::vector<double> ab_fractions;
    std::vector<std::string> ab_arms;
    double ab_scale = 0.0;
    int ab_epochs = 0;
    ablate->add_option("--manifest", ab_manifest, "manifest with train/val/test splits")->required();
    ablate->add_option("--fractions", ab_fractions, "training-set fractions (default 0.2,0.4,0.6,0.8,1.0)")
        ->delimiter(',');
    ablate->add_option("--arms", ab_arms, "arms to run (default da,noda)")->delimiter(',');
    ablate->add_option("--scale", ab_scale, "channel-width multiplier override");
    ablate->add_option("--epochs", ab_epochs, "max epochs override");

    auto* cv = app.add_subcommand("cv", "subject-atomic k-fold cross-validation");
    std::string cv_manifest, cv_arm = "da";
    int cv_folds = 5, cv_epochs = 0;
    double cv_scale = 0.0;
    cv->add_option("--manifest", cv_manifest, "manifest with train/val records")->required();
    cv->add_option("--folds", cv_folds, "fold count k");
    cv->add_option("--arm", cv_arm, "augmentation arm: da | noda");
    cv->add_option("--scale", cv_scale, "channel-width multiplier override");
    cv->add_option("--epochs", cv_epochs, "max epochs override");

    auto* embed = app.add_subcommand("embed", "2D embedding of one plane's images, colored by device");
    std::string em_manifest, em_plane, em_svg, em_csv;
    int em_neighbors = 0, em_epochs = 0;
    double em_min_dist = 0.0;
    embed->add_option("--manifest", em_manifest, "input manifest CSV")->required();
    embed->add_option("--plane", em_plane, "plane to embed: tv | tc")->required();
    embed->add_option("--neighbors", em_neighbors, "k-NN graph neighbor count override");
    embed->add_option("--min-dist", em_min_dist, "layout min_dist override");
    embed->add_option("--epochs", em_epochs, "layout epochs override");
    embed->add_option("--out-svg", em_svg, "scatter SVG path (default: inside the run directory)");
    embed->add_option("--out-csv", em_csv, "point CSV path (default: inside the run directory)");

    auto* report = app.add_subcommand("report", "render a Dice report CSV to bar and radial SVG charts");
    std::string rp_input;
    report->add_option("--input", rp_input, "dice report CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") return app.exit(e);
        std::cerr << "error: usage: " << e.what() << '\n';
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = RunConfig::load(config_path);
        if (seed_given) cfg.seed = seed;
        if (out_dir.empty()) out_dir = cfg.out_dir;

        if (*phantom)
            return cmd_phantom(cfg, out_dir, run_name, ph_count, ph_devices, ph_planes, ph_registry, ph_split,
                               ph_val_fraction);
        if (*augment) return cmd_augment(cfg, out_dir, run_name, aug_manifest, aug_epoch);
        if (*train_cmd) {
            if (tr_scale > 0.0) cfg.model.scale = tr_scale;
            if (tr_epochs > 0) cfg.train.max_epochs = tr_epochs;
            if (tr_batch > 0) cfg.train.batch_size = tr_batch;
            if (tr_lr > 0.0) cfg.train.learning_rate = tr_lr;
            return cmd_train(cfg, out_dir, run_name, tr_manifest, tr_arm);
        }
        if (*eval_cmd) return cmd_eval(cfg, out_dir, run_name, ev_checkpoint, ev_manifest, ev_arm);
        if (*ablate) {
            if (ab_scale > 0.0) cfg.model.scale = ab_scale;
            if (ab_epochs > 0) cfg.train.max_epochs = ab_epochs;
            return cmd_ablate(cfg, out_dir, run_name, ab_manifest, ab_fractions, ab_arms);
        }
        if (*cv) {
            if (cv_scale > 0.0) cfg.model.scale = cv_scale;
            if (cv_epochs > 0) cfg.train.max_epochs = cv_epochs;
            return cmd_cv(cfg, out_dir, run_name, cv_manifest, cv_folds, cv_arm);
        }
        if (*embed) {
            if (em_neighbors > 0) cfg.embedding.n_neighbors = em_neighbors;
            if (em_min_dist > 0.0) cfg.embedding.min_dist = em_min_dist;
            if (em_epochs > 0) cfg.embedding.epochs = em_epochs;
            return cmd_embed(cfg, out_dir, run_name, em_manifest, em_plane, em_svg, em_csv);
        }
        if (*report) return cmd_report(cfg, out_dir, run_name, rp_input);
        std::cerr << "error: usage: no subcommand\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << '\n';
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: invalid: " << e.what() << '\n';
        return 2;
    } catch (const LoadError& e) {
        std::cerr << "error: load: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 1;
    }
}
