#include "fetalseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace fetalseg {

std::vector<Sample> subsample_fraction(const std::vector<Sample>& train_set, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw std::invalid_argument("subsample_fraction: fraction must be in (0,1]");
    if (fraction == 1.0) return train_set;

    std::map<std::string, int> subject_index;  // ordered, deterministic
    for (const auto& s : train_set) subject_index.emplace(s.subject_id, 0);
    std::vector<std::string> subjects;
    subjects.reserve(subject_index.size());
    for (const auto& [id, unused] : subject_index) subjects.push_back(id);

    const auto take = static_cast<size_t>(std::llround(fraction * static_cast<double>(subjects.size())));
    if (take < 1) throw std::invalid_argument("subsample_fraction: fraction selects no subjects");

    Rng rng(mix64(seed, 0x7375627365747321ULL));
    for (size_t i = subjects.size(); i > 1; --i) std::swap(subjects[i - 1], subjects[rng.below(i)]);
    std::set<std::string> chosen(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(take));

    std::vector<Sample> out;
    for (const auto& s : train_set)
        if (chosen.count(s.subject_id)) out.push_back(s);
    return out;
}

DiceReport ablate_fractions(const ModelConfig& model_config, const TrainConfig& train_config,
                            const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                            const NamedTestSets& test_sets, const AblateOptions& options) {
    for (double f : options.fractions)
        if (f <= 0.0 || f > 1.0) throw std::invalid_argument("ablate: fractions must lie in (0,1]");
    if (test_sets.empty()) throw std::invalid_argument("ablate: no test sets");

    DiceReport report;
    for (double fraction : options.fractions) {
        const auto subset = subsample_fraction(train_set, fraction, train_config.seed);
        for (const auto& arm : options.arms) {
            TrainConfig cell_config = train_config;
            cell_config.augment = (arm == "da");
            cell_config.audit_path.clear();
            SegNet<float> model = build_model<float>(model_config, train_config.seed);
            const TrainResult tr = train(model, subset, val_set, cell_config);
            if (!options.checkpoint_dir.empty()) {
                char frac[16];
                std::snprintf(frac, sizeof(frac), "%.2f", fraction);
                CheckpointMeta meta{train_config.seed, tr.steps, tr.best_val_loss};
                save_checkpoint(model, meta,
                                options.checkpoint_dir + "/ablate_f" + frac + "_" + arm + ".ckpt");
            }
            for (const auto& [name, samples] : test_sets) {
                const EvalSummary s = evaluate(model, samples);
                report.rows.push_back({name, arm, fraction, -1, "mean", s.mean_dice});
            }
        }
    }
    return report;
}

CvSummary cross_validate(const ModelConfig& model_config, const TrainConfig& train_config,
                         const std::vector<Sample>& samples, int k) {
    if (k < 2) throw std::invalid_argument("cross_validate: k must be >= 2");
    std::map<std::string, int> subject_index;
    for (const auto& s : samples) subject_index.emplace(s.subject_id, 0);
    if (static_cast<int>(subject_index.size()) < k)
        throw std::invalid_argument("cross_validate: fewer subjects than folds");

    std::vector<std::string> subjects;
    for (const auto& [id, unused] : subject_index) subjects.push_back(id);
    Rng rng(mix64(train_config.seed, 0x63766b666f6c64ULL));
    for (size_t i = subjects.size(); i > 1; --i) std::swap(subjects[i - 1], subjects[rng.below(i)]);
    std::map<std::string, int> fold_of;
    for (size_t i = 0; i < subjects.size(); ++i) fold_of[subjects[i]] = static_cast<int>(i % static_cast<size_t>(k));

    CvSummary out;
    out.fold_of = fold_of;
    const std::string arm = train_config.augment ? "da" : "noda";
    for (int fold = 0; fold < k; ++fold) {
        std::vector<Sample> fold_train, fold_eval;
        for (const auto& s : samples)
            (fold_of[s.subject_id] == fold ? fold_eval : fold_train).push_back(s);

        TrainConfig cfg = train_config;
        cfg.audit_path.clear();
        SegNet<float> model = build_model<float>(model_config, train_config.seed);
        train(model, fold_train, fold_eval, cfg);
        const EvalSummary s = evaluate(model, fold_eval);
        out.report.add_summary(s, "cv", arm, 1.0, fold);
        out.fold_means.push_back(s.mean_dice);
    }
    double sum = 0.0;
    for (double m : out.fold_means) sum += m;
    out.mean = sum / static_cast<double>(k);
    double var = 0.0;
    for (double m : out.fold_means) var += (m - out.mean) * (m - out.mean);
    out.stddev = std::sqrt(var / static_cast<double>(k));
    out.report.rows.push_back({"cv", arm, 1.0, -1, "mean", out.mean});
    out.report.rows.push_back({"cv", arm, 1.0, -1, "std", out.stddev});
    return out;
}

}  // namespace fetalseg
