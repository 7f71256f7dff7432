#include "fetalseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "fetalseg/png_io.hpp"

namespace fetalseg {

std::string plane_name(Plane p) { return p == Plane::TV ? "TV" : "TC"; }

Plane plane_from_string(const std::string& s) {
    if (s == "TV" || s == "tv") return Plane::TV;
    if (s == "TC" || s == "tc") return Plane::TC;
    throw std::invalid_argument("unknown plane '" + s + "' (expected TV or TC)");
}

const char* ClassMap::name(int cls) {
    static const char* kNames[kNumClasses] = {"background",      "cranium",         "brain_parenchyma", "csp",
                                              "midline_falx",    "choroid_plexus",  "lateral_ventricles",
                                              "cerebellum",      "cisterna_magna",  "nuchal_fold",      "skin"};
    if (cls < 0 || cls >= kNumClasses) throw std::invalid_argument("class index out of range");
    return kNames[cls];
}

const std::vector<int>& ClassMap::plane_classes(Plane p) {
    static const std::vector<int> tv = {1, 2, 3, 4, 5, 6};
    static const std::vector<int> tc = {1, 2, 3, 4, 7, 8, 9, 10};
    return p == Plane::TV ? tv : tc;
}

bool ClassMap::allowed(Plane p, int cls) {
    if (cls == kBackground) return true;
    const auto& fg = plane_classes(p);
    return std::find(fg.begin(), fg.end(), cls) != fg.end();
}

namespace {

const char* kManifestHeader = "image_path,mask_path,plane,device,center,subject_id,split";

const std::set<std::string>& known_splits() {
    static const std::set<std::string> s = {"train", "val", "test1", "test2", "test3", "test4"};
    return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

Manifest Manifest::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("manifest: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw LoadError("manifest: empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader)
        throw LoadError("manifest: bad header in " + path + " (expected '" + kManifestHeader + "')");
    Manifest m;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv_line(line);
        if (f.size() != 7)
            throw LoadError("manifest: line " + std::to_string(lineno) + " in " + path + " has " +
                            std::to_string(f.size()) + " fields, expected 7");
        ManifestRecord r;
        r.image_path = f[0];
        r.mask_path = f[1];
        r.plane = plane_from_string(f[2]);
        r.device = f[3];
        r.center = f[4];
        r.subject_id = f[5];
        r.split = f[6];
        if (!known_splits().count(r.split))
            throw LoadError("manifest: line " + std::to_string(lineno) + " in " + path + ": unknown split '" +
                            r.split + "'");
        m.records.push_back(std::move(r));
    }
    return m;
}

void Manifest::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("manifest: cannot open for write: " + path);
    out << kManifestHeader << '\n';
    for (const auto& r : records)
        out << r.image_path << ',' << r.mask_path << ',' << plane_name(r.plane) << ',' << r.device << ',' << r.center
            << ',' << r.subject_id << ',' << r.split << '\n';
    if (!out) throw LoadError("manifest: write failed: " + path);
}

void Manifest::validate() const {
    std::set<std::string> train_paths;
    for (const auto& r : records)
        if (r.split == "train" || r.split == "val") {
            if (!train_paths.insert(r.image_path).second)
                throw std::invalid_argument("manifest: duplicate image path " + r.image_path);
        }
    std::map<std::string, std::set<std::string>> subject_splits;
    for (const auto& r : records)
        if (r.split == "train" || r.split == "val") subject_splits[r.subject_id].insert(r.split);
    for (const auto& [subject, splits] : subject_splits)
        if (splits.size() > 1)
            throw std::invalid_argument("manifest: subject " + subject + " appears in both train and val");
}

std::vector<ManifestRecord> Manifest::with_split(const std::string& split) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
        if (r.split == split) out.push_back(r);
    return out;
}

std::vector<std::string> Manifest::subjects(const std::string& split) const {
    std::set<std::string> s;
    for (const auto& r : records)
        if (split.empty() || r.split == split) s.insert(r.subject_id);
    return {s.begin(), s.end()};
}

Sample load_sample(const ManifestRecord& record) {
    Sample s;
    s.id = record.image_path;
    s.image = read_png_gray(record.image_path);
    s.mask = read_png_mask(record.mask_path);
    if (s.image.h != s.mask.h || s.image.w != s.mask.w)
        throw LoadError("load_sample: image/mask shape mismatch for " + record.image_path + " (" +
                        std::to_string(s.image.h) + "x" + std::to_string(s.image.w) + " vs " +
                        std::to_string(s.mask.h) + "x" + std::to_string(s.mask.w) + ")");
    for (auto v : s.mask.px)
        if (v >= ClassMap::kNumClasses)
            throw LoadError("load_sample: mask value " + std::to_string(static_cast<int>(v)) + " > 10 in " +
                            record.mask_path);
    if (s.image.h != kTargetHeight || s.image.w != kTargetWidth) {
        s.image = resize_bilinear(s.image, kTargetHeight, kTargetWidth);
        s.mask = resize_nearest(s.mask, kTargetHeight, kTargetWidth);
    }
    s.plane = record.plane;
    s.device = record.device;
    s.center = record.center;
    s.subject_id = record.subject_id;
    s.split = record.split;
    return s;
}

void save_sample(const Sample& sample, const std::string& image_path, const std::string& mask_path) {
    write_png_gray(sample.image, image_path);
    write_png_mask(sample.mask, mask_path);
}

Manifest balance_upsample(const Manifest& manifest) {
    std::map<std::string, std::vector<ManifestRecord>> groups;
    for (const auto& r : manifest.records)
        if (r.split == "train") groups[r.device].push_back(r);
    if (groups.empty()) throw std::invalid_argument("balance_upsample: no training records");
    size_t target = 0;
    for (const auto& [dev, recs] : groups) {
        if (recs.empty()) throw std::invalid_argument("balance_upsample: empty device group " + dev);
        target = std::max(target, recs.size());
    }
    Manifest out = manifest;
    for (const auto& [dev, recs] : groups) {
        for (size_t i = recs.size(); i < target; ++i) out.records.push_back(recs[i % recs.size()]);
    }
    return out;
}

Manifest split_train_val(const Manifest& manifest, double ratio, std::uint64_t seed) {
    if (ratio <= 0.0 || ratio >= 1.0) throw std::invalid_argument("split_train_val: ratio must be in (0,1)");
    std::map<std::string, std::vector<size_t>> by_subject;  // ordered for determinism
    size_t total = 0;
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        if (r.split != "train" && r.split != "val") continue;
        if (r.subject_id.empty()) throw std::invalid_argument("split_train_val: record without subject_id");
        by_subject[r.subject_id].push_back(i);
        ++total;
    }
    if (by_subject.size() < 2) throw std::invalid_argument("split_train_val: need at least 2 subjects");

    std::vector<std::string> order;
    order.reserve(by_subject.size());
    for (const auto& [subject, idx] : by_subject) order.push_back(subject);
    Rng rng(mix64(seed, 0x73706c6974ULL));
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    Manifest out = manifest;
    const double target = ratio * static_cast<double>(total);
    size_t assigned = 0;
    for (const auto& subject : order) {
        const auto& idx = by_subject[subject];
        const bool to_train = static_cast<double>(assigned) < target;
        for (size_t i : idx) out.records[i].split = to_train ? "train" : "val";
        if (to_train) assigned += idx.size();
    }
    return out;
}

DeviceRegistry default_device_registry() {
    return {
        {"deviceA", {0.06, 1.00, 0.00, 0.7}},
        {"deviceB", {0.16, 1.35, 0.10, 1.5}},
        {"deviceC", {0.03, 0.72, -0.06, 0.3}},
    };
}

DeviceRegistry load_device_registry(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw LoadError("device registry: cannot open " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("device registry: invalid JSON in " + json_path + ": " + e.what());
    }
    DeviceRegistry reg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& o = it.value();
        for (auto f = o.begin(); f != o.end(); ++f) {
            static const std::set<std::string> known = {"speckle_std", "contrast_gamma", "brightness_offset",
                                                        "blur_sigma"};
            if (!known.count(f.key()))
                throw LoadError("device registry: unknown key '" + f.key() + "' in profile " + it.key());
        }
        DeviceProfile p;
        p.speckle_std = o.value("speckle_std", p.speckle_std);
        p.contrast_gamma = o.value("contrast_gamma", p.contrast_gamma);
        p.brightness_offset = o.value("brightness_offset", p.brightness_offset);
        p.blur_sigma = o.value("blur_sigma", p.blur_sigma);
        reg[it.key()] = p;
    }
    return reg;
}

void save_device_registry(const DeviceRegistry& reg, const std::string& json_path) {
    nlohmann::json j;
    for (const auto& [name, p] : reg)
        j[name] = {{"speckle_std", p.speckle_std},
                   {"contrast_gamma", p.contrast_gamma},
                   {"brightness_offset", p.brightness_offset},
                   {"blur_sigma", p.blur_sigma}};
    std::ofstream out(json_path);
    if (!out) throw LoadError("device registry: cannot open for write: " + json_path);
    out << j.dump(2) << '\n';
}

namespace {

// Axis-aligned-in-ellipse-frame membership test for a rotated ellipse.
struct Ellipse {
    double cy, cx;       // center
    double ry, rx;       // semi-axes (rows, cols)
    double cos_t = 1.0;  // frame rotation
    double sin_t = 0.0;

    bool contains(double r, double c, double scale = 1.0) const {
        const double dy = r - cy, dx = c - cx;
        const double ex = dx * cos_t + dy * sin_t;
        const double ey = -dx * sin_t + dy * cos_t;
        const double ax = rx * scale, ay = ry * scale;
        return (ex / ax) * (ex / ax) + (ey / ay) * (ey / ay) <= 1.0;
    }

    // point expressed in the ellipse frame, normalized by the semi-axes
    void frame(double r, double c, double* fx, double* fy) const {
        const double dy = r - cy, dx = c - cx;
        *fx = (dx * cos_t + dy * sin_t) / rx;
        *fy = (-dx * sin_t + dy * cos_t) / ry;
    }
};

constexpr double kPhantomPi = 3.14159265358979323846;

}  // namespace

std::vector<Sample> phantom_generate(int count, Plane plane, const std::string& device_name,
                                     const DeviceProfile& profile, std::uint64_t seed) {
    if (count < 0) throw std::invalid_argument("phantom_generate: negative count");
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(count));
    const int H = kTargetHeight, W = kTargetWidth;

    for (int i = 0; i < count; ++i) {
        Rng rng(mix64(seed, fnv1a64(device_name + "/" + plane_name(plane)), static_cast<std::uint64_t>(i)));

        Ellipse outer;
        outer.cy = 80.0 + rng.uniform(-5.0, 5.0);
        outer.cx = 144.0 + rng.uniform(-8.0, 8.0);
        outer.ry = rng.uniform(56.0, 66.0);
        outer.rx = rng.uniform(104.0, 122.0);
        const double tilt = rng.uniform(-5.0, 5.0) * kPhantomPi / 180.0;
        outer.cos_t = std::cos(tilt);
        outer.sin_t = std::sin(tilt);
        const double ring = rng.uniform(6.0, 9.0);
        Ellipse inner = outer;
        inner.ry = outer.ry - ring;
        inner.rx = outer.rx - ring;

        const double falx_half = rng.uniform(1.8, 2.6);  // px, half thickness of the midline

        // CSP box in the anterior third of the midline
        const double csp_cx = rng.uniform(0.22, 0.34);  // ellipse-frame x
        const double csp_hx = rng.uniform(0.055, 0.075), csp_hy = rng.uniform(0.10, 0.16);

        // TV structures
        const double cp_cx = rng.uniform(-0.52, -0.40);
        const double cp_hx = rng.uniform(0.16, 0.22), cp_hy = rng.uniform(0.20, 0.28);
        const double lv_hx = cp_hx + rng.uniform(0.10, 0.14), lv_hy = cp_hy + rng.uniform(0.16, 0.24);

        // TC structures
        const double cb_cx = rng.uniform(-0.52, -0.42);
        const double cb_hx = rng.uniform(0.16, 0.20), cb_hy = rng.uniform(0.30, 0.40);
        const double cm_cx = cb_cx - cb_hx - rng.uniform(0.08, 0.12);
        const double cm_hx = rng.uniform(0.05, 0.08), cm_hy = rng.uniform(0.18, 0.26);
        const double nf_extent = rng.uniform(0.07, 0.10);  // shell thickness fraction behind the head
        const double skin_extent = rng.uniform(0.04, 0.06);

        MaskU8 mask(H, W, ClassMap::kBackground);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const double rr = r, cc = c;
                std::uint8_t cls = ClassMap::kBackground;
                const bool in_outer = outer.contains(rr, cc);
                if (in_outer) {
                    if (!inner.contains(rr, cc)) {
                        cls = ClassMap::kCranium;
                    } else {
                        cls = 2;  // parenchyma
                        double fx, fy;
                        inner.frame(rr, cc, &fx, &fy);
                        const double px = fx * inner.rx, py = fy * inner.ry;  // ellipse frame, pixels
                        if (std::abs(py) <= falx_half) cls = 4;               // midline falx
                        if (plane == Plane::TV) {
                            const double lx = (fx - cp_cx) / lv_hx, ly = fy / lv_hy;
                            const double px2 = (fx - cp_cx) / cp_hx, py2 = fy / cp_hy;
                            if (lx * lx + ly * ly <= 1.0) cls = 6;    // lateral ventricles
                            if (px2 * px2 + py2 * py2 <= 1.0) cls = 5;  // choroid plexus inside LV
                        } else {
                            const double bx = (fx - cb_cx) / cb_hx, by = fy / cb_hy;
                            if (bx * bx + by * by <= 1.0) cls = 7;  // cerebellum
                            const double mx = (fx - cm_cx) / cm_hx, my = fy / cm_hy;
                            if (mx * mx + my * my <= 1.0) cls = 8;  // cisterna magna
                        }
                        const double sx = (fx - csp_cx) / csp_hx, sy = fy / csp_hy;
                        if (sx * sx + sy * sy <= 1.0) cls = 3;  // CSP overrides midline
                        (void)px;
                        (void)py;
                    }
                } else if (plane == Plane::TC) {
                    // posterior shells: nuchal fold behind the head, skin elsewhere
                    double fx, fy;
                    outer.frame(rr, cc, &fx, &fy);
                    const double rad = std::sqrt(fx * fx + fy * fy);
                    if (rad <= 1.0 + skin_extent) {
                        cls = 10;  // skin
                    } else if (fx < -0.55 && rad <= 1.0 + skin_extent + nf_extent) {
                        cls = 9;  // nuchal fold
                    }
                }
                mask.at(r, c) = cls;
            }

        // intensity rendering
        static const float kBase[ClassMap::kNumClasses] = {0.08f, 0.88f, 0.34f, 0.13f, 0.72f, 0.62f,
                                                           0.17f, 0.52f, 0.12f, 0.58f, 0.78f};
        float jitter[ClassMap::kNumClasses];
        for (auto& j : jitter) j = static_cast<float>(rng.uniform(-0.03, 0.03));
        ImageF img(H, W);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const int cls = mask.at(r, c);
                float v = kBase[cls] + jitter[cls];
                v *= 1.0f - 0.12f * static_cast<float>(r) / H;  // mild depth attenuation
                img.at(r, c) = clamp01(v);
            }

        if (profile.blur_sigma > 0.0) img = gaussian_blur(img, profile.blur_sigma, Border::kClamp);
        for (auto& v : img.px) {
            double x = std::pow(static_cast<double>(v), profile.contrast_gamma) + profile.brightness_offset;
            x *= 1.0 + rng.normal(0.0, profile.speckle_std);
            v = clamp01(static_cast<float>(x));
        }

        Sample s;
        s.id = device_name + "-" + plane_name(plane) + "-" + std::to_string(i);
        s.image = std::move(img);
        s.mask = std::move(mask);
        s.plane = plane;
        s.device = device_name;
        s.center = "phantom";
        s.subject_id = s.id;
        s.split = "train";
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace fetalseg
