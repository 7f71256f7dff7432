#ifndef FETALSEG_TRAIN_HPP
#define FETALSEG_TRAIN_HPP

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fetalseg/augment.hpp"
#include "fetalseg/data.hpp"
#include "fetalseg/model.hpp"

namespace fetalseg {

// Soft Dice loss over all classes including background:
//   1 - mean_c (2*sum(p_c*t_c) + eps) / (sum(p_c) + sum(t_c) + eps)
// with sums over batch and space and eps = 1e-6. target holds class indices,
// flattened [N,H,W].
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const std::vector<std::uint8_t>& target) {
    if (probs.shape().size() != 4) throw std::invalid_argument("dice_loss: probs must be [N,C,H,W]");
    const int n = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const std::int64_t npix = static_cast<std::int64_t>(n) * hw;
    if (static_cast<std::int64_t>(target.size()) != npix)
        throw std::invalid_argument("dice_loss: target size " + std::to_string(target.size()) + " != N*H*W");
    for (auto t : target)
        if (t >= c) throw std::invalid_argument("dice_loss: target class out of range");

    const T eps = static_cast<T>(1e-6);
    auto inter = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
    auto psum = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
    auto tsum = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
    const T* p = probs.data();
    for (int img = 0; img < n; ++img) {
        const T* base = p + static_cast<std::int64_t>(img) * c * hw;
        const std::uint8_t* tg = target.data() + static_cast<std::int64_t>(img) * hw;
        for (int ch = 0; ch < c; ++ch) {
            const T* row = base + static_cast<std::int64_t>(ch) * hw;
            T ps = 0, is = 0;
            std::int64_t ts = 0;
            for (std::int64_t i = 0; i < hw; ++i) {
                ps += row[i];
                const bool hit = (tg[i] == ch);
                ts += hit;
                if (hit) is += row[i];
            }
            (*psum)[static_cast<size_t>(ch)] += ps;
            (*inter)[static_cast<size_t>(ch)] += is;
            (*tsum)[static_cast<size_t>(ch)] += static_cast<T>(ts);
        }
    }
    T dice_sum = 0;
    for (int ch = 0; ch < c; ++ch)
        dice_sum += (T(2) * (*inter)[static_cast<size_t>(ch)] + eps) /
                    ((*psum)[static_cast<size_t>(ch)] + (*tsum)[static_cast<size_t>(ch)] + eps);
    std::vector<T> loss = {T(1) - dice_sum / static_cast<T>(c)};
    check_finite("dice_loss", loss);

    auto pn = probs.node();
    auto tgt = std::make_shared<std::vector<std::uint8_t>>(target);
    auto backprop = [pn, tgt, inter, psum, tsum, n, c, hw, eps](typename Tensor<T>::Node& node) {
        if (!pn->requires_grad) return;
        const T g = node.grad[0];
        const T scale = -g / static_cast<T>(c);
        for (int ch = 0; ch < c; ++ch) {
            const T denom = (*psum)[static_cast<size_t>(ch)] + (*tsum)[static_cast<size_t>(ch)] + eps;
            const T numer = T(2) * (*inter)[static_cast<size_t>(ch)] + eps;
            const T d_dp = -numer / (denom * denom);             // d dice_c / d p (any pixel)
            const T d_dhit = T(2) / denom - numer / (denom * denom);  // when the pixel is class ch
            for (int img = 0; img < n; ++img) {
                T* dst = pn->grad.data() + (static_cast<std::int64_t>(img) * c + ch) * hw;
                const std::uint8_t* tg = tgt->data() + static_cast<std::int64_t>(img) * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += scale * (tg[i] == ch ? d_dhit : d_dp);
            }
        }
    };
    return Tensor<T>::make_result({1}, std::move(loss), {pn}, std::move(backprop));
}

// 2|P∩T| / (|P|+|T|); empty when neither mask contains the class.
std::optional<double> dice_coefficient(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                                       int cls);

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int max_epochs = 100;
    bool augment = true;
    AugmentationConfig aug;
    std::uint64_t seed = 0;
    std::string audit_path;  // when set, JSONL of drawn augmentation parameters

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
        aug.validate();
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::int64_t steps = 0;
};

// Adam with bias correction; state per parameter tensor.
struct Adam {
    double lr, beta1, beta2, eps;
    std::int64_t t = 0;
    std::vector<std::vector<float>> m, v;

    Adam(double lr_, double b1, double b2, double e) : lr(lr_), beta1(b1), beta2(b2), eps(e) {}
    void step(std::vector<Tensor<float>>& params);
};

// Epoch loop with seeded shuffling, optional online augmentation, per-epoch
// validation, and best-validation-loss checkpoint selection. On return the
// model holds the best weights.
TrainResult train(SegNet<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config);

void write_training_log_csv(const std::vector<EpochLog>& log, const std::string& path);

// Per-class evaluation; classes are scored only on samples of planes that
// contain them, and both-empty cases are excluded from the averages.
struct EvalSummary {
    std::map<int, double> per_class;
    std::map<int, int> per_class_count;
    double mean_dice = std::numeric_limits<double>::quiet_NaN();
};

// Aggregation core: predictions[i] is the class map for test_set[i].
EvalSummary evaluate_masks(const std::vector<std::vector<std::uint8_t>>& predictions,
                           const std::vector<Sample>& test_set);

EvalSummary evaluate(SegNet<float>& model, const std::vector<Sample>& test_set);

// Flat result rows; CSV header: test_set,arm,fraction,fold,class_name,dice
struct DiceReportRow {
    std::string test_set;
    std::string arm;        // "da" | "noda"
    double fraction = 1.0;  // training-set fraction, 1.0 outside ablations
    int fold = -1;          // cross-validation fold, -1 outside CV
    std::string class_name;
    double dice = 0.0;
};

struct DiceReport {
    std::vector<DiceReportRow> rows;

    void add_summary(const EvalSummary& s, const std::string& test_set, const std::string& arm, double fraction,
                     int fold);
    void save_csv(const std::string& path) const;
    static DiceReport load_csv(const std::string& path);
};

// Mean foreground Dice of a summary (already class-averaged).
inline double mean_dice(const EvalSummary& s) { return s.mean_dice; }

}  // namespace fetalseg

#endif
