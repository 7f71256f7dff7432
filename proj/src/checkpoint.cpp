#include <cstring>
#include <fstream>
#include <json.hpp>

#include "fetalseg/model.hpp"

namespace fetalseg {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'S', 'E', 'G', 'N', 'E', 'T', '1'};

json config_to_json_obj(const ModelConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"height", c.height},
                {"width", c.width},
                {"levels", c.levels},
                {"encoder_channels", c.encoder_channels},
                {"latent_channels", c.latent_channels},
                {"num_classes", c.num_classes},
                {"scale", c.scale}};
}

ModelConfig config_from_json_obj(const json& j) {
    static const std::vector<std::string> known = {"in_channels",     "height",      "width", "levels",
                                                   "encoder_channels", "latent_channels", "num_classes", "scale"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::invalid_argument("model config: unknown key '" + it.key() + "'");
    }
    ModelConfig c;
    c.in_channels = j.value("in_channels", c.in_channels);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.levels = j.value("levels", c.levels);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.scale = j.value("scale", c.scale);
    c.validate();
    return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) { return config_to_json_obj(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    return config_from_json_obj(json::parse(text));
}

void save_checkpoint(SegNet<float>& model, const CheckpointMeta& meta, const std::string& path) {
    json header = {{"format", 1},
                   {"config", config_to_json_obj(model.config)},
                   {"seed", meta.seed},
                   {"step", meta.step},
                   {"val_loss", meta.val_loss}};
    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("checkpoint: cannot open for write: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto write_blob = [&out](const std::vector<float>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    };
    for (auto& p : model.parameters()) write_blob(p.values());
    for (auto* bn : model.batchnorms()) {
        write_blob(bn->running_mean);
        write_blob(bn->running_var);
    }
    if (!out) throw LoadError("checkpoint: write failed: " + path);
}

SegNet<float> load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw LoadError("checkpoint: bad magic in " + path);
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    if (!in) throw LoadError("checkpoint: truncated header in " + path);
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw LoadError("checkpoint: invalid header JSON in " + path + ": " + e.what());
    }
    ModelConfig config = config_from_json_obj(header.at("config"));
    CheckpointMeta m;
    m.seed = header.value("seed", 0ULL);
    m.step = header.value("step", 0LL);
    m.val_loss = header.value("val_loss", 0.0);
    if (meta) *meta = m;

    SegNet<float> model = build_model<float>(config, m.seed);
    auto read_blob = [&in, &path](std::vector<float>& v) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
        if (!in) throw LoadError("checkpoint: truncated weights in " + path);
    };
    for (auto& p : model.parameters()) read_blob(p.values());
    for (auto* bn : model.batchnorms()) {
        read_blob(bn->running_mean);
        read_blob(bn->running_var);
    }
    in.peek();
    if (!in.eof()) throw LoadError("checkpoint: trailing bytes in " + path);
    return model;
}

}  // namespace fetalseg
