#ifndef FETALSEG_HARNESS_HPP
#define FETALSEG_HARNESS_HPP

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fetalseg/train.hpp"

// Experiment drivers: dataset-fraction ablation across augmentation arms and
// subject-atomic k-fold cross-validation. Each cell trains a fresh model from
// the shared seed, so the fraction-1.0 cell reproduces a standalone run
// bit for bit.

namespace fetalseg {

using NamedTestSets = std::vector<std::pair<std::string, std::vector<Sample>>>;

// Subject-atomic subsample keeping original sample order; fraction 1.0 is the
// identity. Fractions draw nested subject prefixes from one seeded shuffle.
std::vector<Sample> subsample_fraction(const std::vector<Sample>& train_set, double fraction, std::uint64_t seed);

struct AblateOptions {
    std::vector<double> fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<std::string> arms = {"da", "noda"};
    std::string checkpoint_dir;  // when set, writes one checkpoint per cell
};

// One (train, evaluate-on-every-test-set) run per (fraction, arm); emits one
// mean row per (fraction, arm, test set).
DiceReport ablate_fractions(const ModelConfig& model_config, const TrainConfig& train_config,
                            const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                            const NamedTestSets& test_sets, const AblateOptions& options);

struct CvSummary {
    DiceReport report;               // per-fold class rows + per-fold mean rows + aggregate rows
    std::vector<double> fold_means;  // mean Dice per fold
    double mean = 0.0;               // mean of fold means
    double stddev = 0.0;             // population std of fold means
    std::map<std::string, int> fold_of;  // subject -> validation fold
};

// Subject-atomic k-fold partition; each fold serves as the validation set for
// checkpoint selection and as the held-out evaluation set.
CvSummary cross_validate(const ModelConfig& model_config, const TrainConfig& train_config,
                         const std::vector<Sample>& samples, int k);

}  // namespace fetalseg

#endif
