#include "fetalseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fetalseg {

std::optional<double> dice_coefficient(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                                       int cls) {
    if (pred.size() != target.size()) throw std::invalid_argument("dice_coefficient: mask size mismatch");
    std::int64_t np = 0, nt = 0, ni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == cls;
        const bool t = target[i] == cls;
        np += p;
        nt += t;
        ni += (p && t);
    }
    if (np + nt == 0) return std::nullopt;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(np + nt);
}

void Adam::step(std::vector<Tensor<float>>& params) {
    if (m.empty()) {
        m.resize(params.size());
        v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m[i].assign(static_cast<size_t>(params[i].size()), 0.0f);
            v[i].assign(static_cast<size_t>(params[i].size()), 0.0f);
        }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad()) continue;
        const float* g = p.grad().data();
        float* w = p.data();
        float* mi = m[i].data();
        float* vi = v[i].data();
        const std::int64_t nvals = p.size();
        for (std::int64_t j = 0; j < nvals; ++j) {
            mi[j] = static_cast<float>(beta1 * mi[j] + (1.0 - beta1) * g[j]);
            vi[j] = static_cast<float>(beta2 * vi[j] + (1.0 - beta2) * static_cast<double>(g[j]) * g[j]);
            const double mhat = mi[j] / bc1;
            const double vhat = vi[j] / bc2;
            w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

namespace {

// [B,1,H,W] batch plus flattened targets from a span of samples.
void assemble_batch(const std::vector<Sample>& samples, const std::vector<size_t>& order, size_t begin, size_t end,
                    Tensor<float>* batch, std::vector<std::uint8_t>* target) {
    const int b = static_cast<int>(end - begin);
    const int h = samples[order[begin]].image.h, w = samples[order[begin]].image.w;
    std::vector<float> data(static_cast<size_t>(b) * h * w);
    target->resize(static_cast<size_t>(b) * h * w);
    for (int i = 0; i < b; ++i) {
        const Sample& s = samples[order[begin + static_cast<size_t>(i)]];
        if (s.image.h != h || s.image.w != w) throw std::invalid_argument("train: mixed image sizes in one batch");
        std::copy(s.image.px.begin(), s.image.px.end(), data.begin() + static_cast<std::int64_t>(i) * h * w);
        std::copy(s.mask.px.begin(), s.mask.px.end(), target->begin() + static_cast<std::int64_t>(i) * h * w);
    }
    *batch = Tensor<float>::from_data({b, 1, h, w}, std::move(data));
}

double validation_loss(SegNet<float>& model, const std::vector<Sample>& val_set, int batch_size) {
    std::vector<size_t> order(val_set.size());
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
        Tensor<float> batch;
        std::vector<std::uint8_t> target;
        assemble_batch(val_set, order, at, end, &batch, &target);
        auto loss = dice_loss(model.forward(batch, Mode::kEval), target);
        total += static_cast<double>(loss.data()[0]) * static_cast<double>(end - at);
    }
    return total / static_cast<double>(val_set.size());
}

}  // namespace

TrainResult train(SegNet<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config) {
    config.validate();
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("train: need non-empty train and val sets");

    Adam adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    auto params = model.parameters();

    std::ofstream audit;
    if (!config.audit_path.empty()) {
        audit.open(config.audit_path);
        if (!audit) throw LoadError("train: cannot open audit sidecar " + config.audit_path);
    }

    TrainResult result;
    std::vector<std::vector<float>> best_state;
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        Rng shuffle_rng(mix64(config.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), at + static_cast<size_t>(config.batch_size));
            Tensor<float> batch;
            std::vector<std::uint8_t> target;
            if (config.augment) {
                std::vector<Sample> augmented;
                augmented.reserve(end - at);
                for (size_t i = at; i < end; ++i) {
                    SampleAudit sa;
                    augmented.push_back(apply_pipeline(train_set[order[i]], config.aug, config.seed, epoch, &sa));
                    if (audit.is_open()) audit << audit_to_json(sa) << '\n';
                }
                std::vector<size_t> ident(augmented.size());
                std::iota(ident.begin(), ident.end(), 0);
                assemble_batch(augmented, ident, 0, augmented.size(), &batch, &target);
            } else {
                assemble_batch(train_set, order, at, end, &batch, &target);
            }

            auto loss = dice_loss(model.forward(batch, Mode::kTrain), target);
            const double lval = loss.data()[0];
            if (!std::isfinite(lval)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << " batch " << (at / config.batch_size)
                   << " (samples";
                for (size_t i = at; i < end; ++i) os << ' ' << train_set[order[i]].id;
                os << ')';
                throw NumericError(os.str());
            }
            for (auto& p : params) p.zero_grad();
            loss.backward();
            adam.step(params);
            ++result.steps;
            epoch_loss += lval * static_cast<double>(end - at);
        }
        epoch_loss /= static_cast<double>(train_set.size());

        const double val = validation_loss(model, val_set, config.batch_size);
        result.log.push_back({epoch, epoch_loss, val});
        if (val < result.best_val_loss) {
            result.best_val_loss = val;
            result.best_epoch = epoch;
            best_state = model.snapshot();
        }
    }
    if (!best_state.empty()) model.restore(best_state);
    return result;
}

void write_training_log_csv(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw LoadError("training log: cannot open for write: " + path);
    out << "epoch,train_loss,val_loss\n";
    char buf[96];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", row.epoch, row.train_loss, row.val_loss);
        out << buf;
    }
}

EvalSummary evaluate_masks(const std::vector<std::vector<std::uint8_t>>& predictions,
                           const std::vector<Sample>& test_set) {
    if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
    if (predictions.size() != test_set.size()) throw std::invalid_argument("evaluate: prediction count mismatch");
    std::map<int, std::vector<double>> values;
    for (size_t i = 0; i < test_set.size(); ++i) {
        const Sample& sample = test_set[i];
        for (int cls : ClassMap::plane_classes(sample.plane)) {
            const auto d = dice_coefficient(predictions[i], sample.mask.px, cls);
            if (d) values[cls].push_back(*d);
        }
    }
    EvalSummary out;
    std::vector<double> class_means;
    for (auto& [cls, v] : values) {
        std::sort(v.begin(), v.end());  // canonical order: sample-order invariant
        double sum = 0.0;
        for (double x : v) sum += x;
        const double mean = sum / static_cast<double>(v.size());
        out.per_class[cls] = mean;
        out.per_class_count[cls] = static_cast<int>(v.size());
        class_means.push_back(mean);
    }
    if (!class_means.empty()) {
        std::sort(class_means.begin(), class_means.end());
        double sum = 0.0;
        for (double x : class_means) sum += x;
        out.mean_dice = sum / static_cast<double>(class_means.size());
    }
    return out;
}

EvalSummary evaluate(SegNet<float>& model, const std::vector<Sample>& test_set) {
    if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
    std::vector<std::vector<std::uint8_t>> predictions;
    predictions.reserve(test_set.size());
    for (const auto& sample : test_set) {
        Tensor<float> batch;
        std::vector<std::uint8_t> target;
        std::vector<size_t> one = {0};
        std::vector<Sample> wrap = {sample};
        assemble_batch(wrap, one, 0, 1, &batch, &target);
        predictions.push_back(predict_mask(model.forward(batch, Mode::kEval)).data);
    }
    return evaluate_masks(predictions, test_set);
}

void DiceReport::add_summary(const EvalSummary& s, const std::string& test_set, const std::string& arm,
                             double fraction, int fold) {
    for (const auto& [cls, dice] : s.per_class)
        rows.push_back({test_set, arm, fraction, fold, ClassMap::name(cls), dice});
    rows.push_back({test_set, arm, fraction, fold, "mean", s.mean_dice});
}

void DiceReport::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("dice report: cannot open for write: " + path);
    out << "test_set,arm,fraction,fold,class_name,dice\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.4g,%d,", r.fraction, r.fold);
        out << r.test_set << ',' << r.arm << ',' << buf << r.class_name << ',';
        std::snprintf(buf, sizeof(buf), "%.9g\n", r.dice);
        out << buf;
    }
}

DiceReport DiceReport::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("dice report: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw LoadError("dice report: empty file " + path);
    DiceReport rep;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f[6];
        for (int i = 0; i < 6; ++i)
            if (!std::getline(ls, f[i], i == 5 ? '\n' : ','))
                throw LoadError("dice report: malformed row in " + path);
        rep.rows.push_back({f[0], f[1], std::stod(f[2]), std::stoi(f[3]), f[4], std::stod(f[5])});
    }
    return rep;
}

}  // namespace fetalseg
