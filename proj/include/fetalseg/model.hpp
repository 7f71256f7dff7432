#ifndef FETALSEG_MODEL_HPP
#define FETALSEG_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fetalseg/common.hpp"
#include "fetalseg/ops.hpp"

// Segmentation network: 4 Inception-A encoder levels (64/128/256/512 feature
// maps, scaled), an Inception-A latent block at twice the deepest encoder
// width, a standard-block decoder halving from the latent width, and a 1x1
// softmax head. Skip connections concatenate pre-pool encoder features.

namespace fetalseg {

struct ModelConfig {
    int in_channels = 1;
    int height = 160;
    int width = 288;
    int levels = 4;
    std::vector<int> encoder_channels = {64, 128, 256, 512};
    int latent_channels = 1024;
    int num_classes = 11;
    double scale = 1.0;

    int scaled(int base) const {
        const double exact = base * scale;
        const long long r = std::llround(exact);
        if (std::abs(exact - static_cast<double>(r)) > 1e-9 || r < 1)
            throw std::invalid_argument("model config: channel width " + std::to_string(base) + " * scale " +
                                        std::to_string(scale) + " is not a positive integer");
        return static_cast<int>(r);
    }

    void validate() const {
        if (in_channels < 1 || num_classes < 2 || levels < 1) throw std::invalid_argument("model config: bad sizes");
        if (static_cast<int>(encoder_channels.size()) != levels)
            throw std::invalid_argument("model config: encoder_channels must list one width per level");
        const int div = 1 << levels;
        if (height % div != 0 || width % div != 0)
            throw std::invalid_argument("model config: input " + std::to_string(height) + "x" + std::to_string(width) +
                                        " not divisible by 2^levels");
        for (int c : encoder_channels)
            if (scaled(c) % 4 != 0)
                throw std::invalid_argument("model config: scaled encoder width " + std::to_string(scaled(c)) +
                                            " not divisible by 4 (Inception branch split)");
        if (scaled(latent_channels) % 8 != 0)
            throw std::invalid_argument("model config: scaled latent width must be divisible by 8");
    }
};

namespace detail {

template <typename T>
ConvParams<T> make_conv(int in_ch, int out_ch, int ksize, int pad, Rng& rng) {
    const int fan_in = in_ch * ksize * ksize;
    const T stddev = static_cast<T>(std::sqrt(2.0 / fan_in));
    std::vector<T> w(static_cast<size_t>(out_ch) * in_ch * ksize * ksize);
    for (auto& v : w) v = static_cast<T>(rng.normal(0.0, 1.0)) * stddev;
    ConvParams<T> p;
    p.weight = Tensor<T>::from_data({out_ch, in_ch, ksize, ksize}, std::move(w), true);
    p.bias = Tensor<T>::zeros({out_ch}, true);
    p.stride = 1;
    p.padding = pad;
    return p;
}

}  // namespace detail

template <typename T>
struct ConvBnRelu {
    ConvParams<T> conv;
    BatchNormState<T> bn;

    static ConvBnRelu make(int in_ch, int out_ch, int ksize, int pad, Rng& rng) {
        ConvBnRelu layer;
        layer.conv = detail::make_conv<T>(in_ch, out_ch, ksize, pad, rng);
        layer.bn = BatchNormState<T>::make(out_ch);
        return layer;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) { return relu(batchnorm(conv2d(x, conv), bn, mode)); }

    template <typename Fn>
    void visit(Fn&& fn) {
        fn(conv.weight);
        fn(conv.bias);
        fn(bn.gamma);
        fn(bn.beta);
    }
};

// Four parallel branches, each emitting out_ch/4 channels:
//   (a) 3x3 avgpool -> 1x1 conv      (b) 1x1 conv
//   (c) 1x1 conv -> 3x3 conv         (d) 1x1 conv -> 3x3 conv -> 3x3 conv
template <typename T>
struct InceptionABlock {
    ConvBnRelu<T> pool_proj;
    ConvBnRelu<T> one;
    ConvBnRelu<T> three_reduce, three;
    ConvBnRelu<T> dbl_reduce, dbl_a, dbl_b;

    static InceptionABlock make(int in_ch, int out_ch, Rng& rng) {
        if (out_ch % 4 != 0) throw std::invalid_argument("inception block: out_ch must be divisible by 4");
        const int q = out_ch / 4;
        InceptionABlock b;
        b.pool_proj = ConvBnRelu<T>::make(in_ch, q, 1, 0, rng);
        b.one = ConvBnRelu<T>::make(in_ch, q, 1, 0, rng);
        b.three_reduce = ConvBnRelu<T>::make(in_ch, q, 1, 0, rng);
        b.three = ConvBnRelu<T>::make(q, q, 3, 1, rng);
        b.dbl_reduce = ConvBnRelu<T>::make(in_ch, q, 1, 0, rng);
        b.dbl_a = ConvBnRelu<T>::make(q, q, 3, 1, rng);
        b.dbl_b = ConvBnRelu<T>::make(q, q, 3, 1, rng);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        Tensor<T> a = pool_proj.forward(avgpool3_s1(x), mode);
        Tensor<T> b = one.forward(x, mode);
        Tensor<T> c = three.forward(three_reduce.forward(x, mode), mode);
        Tensor<T> d = dbl_b.forward(dbl_a.forward(dbl_reduce.forward(x, mode), mode), mode);
        return concat_channels<T>({a, b, c, d});
    }

    template <typename Fn>
    void visit(Fn&& fn) {
        pool_proj.visit(fn);
        one.visit(fn);
        three_reduce.visit(fn);
        three.visit(fn);
        dbl_reduce.visit(fn);
        dbl_a.visit(fn);
        dbl_b.visit(fn);
    }

    template <typename Fn>
    void visit_bn(Fn&& fn) {
        fn(pool_proj.bn);
        fn(one.bn);
        fn(three_reduce.bn);
        fn(three.bn);
        fn(dbl_reduce.bn);
        fn(dbl_a.bn);
        fn(dbl_b.bn);
    }
};

// Two (3x3 conv, pad 1 -> batchnorm -> relu) stages, in_ch -> out_ch -> out_ch.
template <typename T>
struct StandardBlock {
    ConvBnRelu<T> first, second;

    static StandardBlock make(int in_ch, int out_ch, Rng& rng) {
        StandardBlock b;
        b.first = ConvBnRelu<T>::make(in_ch, out_ch, 3, 1, rng);
        b.second = ConvBnRelu<T>::make(out_ch, out_ch, 3, 1, rng);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) { return second.forward(first.forward(x, mode), mode); }

    template <typename Fn>
    void visit(Fn&& fn) {
        first.visit(fn);
        second.visit(fn);
    }

    template <typename Fn>
    void visit_bn(Fn&& fn) {
        fn(first.bn);
        fn(second.bn);
    }
};

template <typename T>
struct SegNet {
    ModelConfig config;
    std::uint64_t init_seed = 0;
    std::vector<InceptionABlock<T>> encoder;
    InceptionABlock<T> latent;
    std::vector<StandardBlock<T>> decoder;  // deepest first
    ConvParams<T> head;

    Tensor<T> forward_logits(const Tensor<T>& batch, Mode mode) {
        if (batch.shape().size() != 4 || batch.dim(1) != config.in_channels || batch.dim(2) != config.height ||
            batch.dim(3) != config.width)
            throw std::invalid_argument("forward: expected [N," + std::to_string(config.in_channels) + "," +
                                        std::to_string(config.height) + "," + std::to_string(config.width) +
                                        "], got " + shape_str(batch.shape()));
        std::vector<Tensor<T>> skips;
        skips.reserve(encoder.size());
        Tensor<T> cur = batch;
        for (auto& block : encoder) {
            cur = block.forward(cur, mode);
            skips.push_back(cur);
            cur = maxpool2(cur);
        }
        cur = latent.forward(cur, mode);
        for (size_t i = 0; i < decoder.size(); ++i) {
            cur = upsample_bilinear2x(cur);
            cur = concat_channels<T>({cur, skips[skips.size() - 1 - i]});
            cur = decoder[i].forward(cur, mode);
        }
        return conv2d(cur, head);
    }

    Tensor<T> forward(const Tensor<T>& batch, Mode mode) { return softmax_channels(forward_logits(batch, mode)); }

    // Trainable tensors in fixed declaration order (checkpoint blob order).
    std::vector<Tensor<T>> parameters() {
        std::vector<Tensor<T>> out;
        auto add = [&out](Tensor<T>& t) { out.push_back(t); };
        for (auto& b : encoder) b.visit(add);
        latent.visit(add);
        for (auto& b : decoder) b.visit(add);
        add(head.weight);
        add(head.bias);
        return out;
    }

    std::vector<BatchNormState<T>*> batchnorms() {
        std::vector<BatchNormState<T>*> out;
        auto add = [&out](BatchNormState<T>& s) { out.push_back(&s); };
        for (auto& b : encoder) b.visit_bn(add);
        latent.visit_bn(add);
        for (auto& b : decoder) b.visit_bn(add);
        return out;
    }

    // Deep copy of all learnable state + running stats; paired with restore().
    std::vector<std::vector<T>> snapshot() {
        std::vector<std::vector<T>> out;
        for (auto& p : parameters()) out.push_back(p.values());
        for (auto* bn : batchnorms()) {
            out.push_back(bn->running_mean);
            out.push_back(bn->running_var);
        }
        return out;
    }

    void restore(const std::vector<std::vector<T>>& snap) {
        size_t i = 0;
        for (auto& p : parameters()) p.values() = snap.at(i++);
        for (auto* bn : batchnorms()) {
            bn->running_mean = snap.at(i++);
            bn->running_var = snap.at(i++);
        }
        if (i != snap.size()) throw std::invalid_argument("restore: snapshot size mismatch");
    }
};

template <typename T>
SegNet<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix64(seed, 0x6d6f64656c696e69ULL));
    SegNet<T> net;
    net.config = config;
    net.init_seed = seed;
    int in_ch = config.in_channels;
    for (int lvl = 0; lvl < config.levels; ++lvl) {
        const int out_ch = config.scaled(config.encoder_channels[static_cast<size_t>(lvl)]);
        net.encoder.push_back(InceptionABlock<T>::make(in_ch, out_ch, rng));
        in_ch = out_ch;
    }
    const int lat = config.scaled(config.latent_channels);
    net.latent = InceptionABlock<T>::make(in_ch, lat, rng);
    int prev = lat;
    for (int lvl = config.levels - 1; lvl >= 0; --lvl) {
        const int skip = config.scaled(config.encoder_channels[static_cast<size_t>(lvl)]);
        const int out_ch = lat >> (config.levels - 1 - lvl);
        net.decoder.push_back(StandardBlock<T>::make(prev + skip, out_ch, rng));
        prev = out_ch;
    }
    net.head = detail::make_conv<T>(prev, config.num_classes, 1, 0, rng);
    return net;
}

template <typename T>
std::int64_t count_parameters(SegNet<T>& model) {
    std::int64_t total = 0;
    for (auto& p : model.parameters()) total += p.size();
    return total;
}

// Per-pixel argmax class map; ties resolve to the lowest class index.
struct MaskBatch {
    int n = 0, h = 0, w = 0;
    std::vector<std::uint8_t> data;  // [n, h, w]

    const std::uint8_t* image(int i) const { return data.data() + static_cast<std::int64_t>(i) * h * w; }
};

template <typename T>
MaskBatch predict_mask(const Tensor<T>& probs) {
    if (probs.shape().size() != 4) throw std::invalid_argument("predict_mask: input must be [N,C,H,W]");
    const int n = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    MaskBatch out;
    out.n = n;
    out.h = h;
    out.w = w;
    out.data.resize(static_cast<size_t>(n) * hw);
    const T* p = probs.data();
    for (int img = 0; img < n; ++img) {
        const T* base = p + static_cast<std::int64_t>(img) * c * hw;
        std::uint8_t* dst = out.data.data() + static_cast<std::int64_t>(img) * hw;
        for (std::int64_t px = 0; px < hw; ++px) {
            int best = 0;
            T bv = base[px];
            for (int ch = 1; ch < c; ++ch) {
                const T v = base[ch * hw + px];
                if (v > bv) {
                    bv = v;
                    best = ch;
                }
            }
            dst[px] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

// Checkpoint container: magic, little-endian u32 JSON header length, JSON
// header (config/seed/step/val_loss), then raw little-endian float32 blobs for
// every parameter tensor followed by batchnorm running stats, in declaration
// order. Implemented in checkpoint.cpp.
struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    double val_loss = 0.0;
};

void save_checkpoint(SegNet<float>& model, const CheckpointMeta& meta, const std::string& path);
SegNet<float> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace fetalseg

#endif
