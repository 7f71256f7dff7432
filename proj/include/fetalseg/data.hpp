#ifndef FETALSEG_DATA_HPP
#define FETALSEG_DATA_HPP

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fetalseg/common.hpp"
#include "fetalseg/image.hpp"

namespace fetalseg {

enum class Plane { TV, TC };

std::string plane_name(Plane p);
Plane plane_from_string(const std::string& s);

// Fixed class indexing shared across planes. Classes 1-4 appear in both
// standard views; 5-6 are TV-only, 7-10 TC-only.
struct ClassMap {
    static constexpr int kNumClasses = 11;
    static constexpr int kBackground = 0;
    static constexpr int kCranium = 1;

    static const char* name(int cls);
    static const std::vector<int>& plane_classes(Plane p);  // foreground classes for a plane
    static bool allowed(Plane p, int cls);
};

struct Sample {
    std::string id;
    ImageF image;  // grayscale [0,1], 160x288 after loading
    MaskU8 mask;   // class indices
    Plane plane = Plane::TV;
    std::string device;
    std::string center;
    std::string subject_id;
    std::string split;  // train | val | test1..test4
};

constexpr int kTargetHeight = 160;
constexpr int kTargetWidth = 288;

struct ManifestRecord {
    std::string image_path;
    std::string mask_path;
    Plane plane = Plane::TV;
    std::string device;
    std::string center;
    std::string subject_id;
    std::string split;
};

// CSV-backed dataset listing; header is fixed:
//   image_path,mask_path,plane,device,center,subject_id,split
struct Manifest {
    std::vector<ManifestRecord> records;

    static Manifest load_csv(const std::string& path);
    void save_csv(const std::string& path) const;

    // no duplicate image paths, no subject shared between train and val
    void validate() const;

    std::vector<ManifestRecord> with_split(const std::string& split) const;
    std::vector<std::string> subjects(const std::string& split) const;  // sorted unique
};

// Loads and normalizes one record: image bilinear-resized to 160x288 and
// scaled to [0,1], mask nearest-resized; anything else untouched.
Sample load_sample(const ManifestRecord& record);

void save_sample(const Sample& sample, const std::string& image_path, const std::string& mask_path);

// Equalizes per-group training counts up to the largest group by cyclic
// repetition; val/test records pass through untouched.
Manifest balance_upsample(const Manifest& manifest);

// Subject-atomic train/val split at the given train fraction.
Manifest split_train_val(const Manifest& manifest, double ratio, std::uint64_t seed);

// Rendering knobs emulating per-device image construction pipelines.
struct DeviceProfile {
    double speckle_std = 0.08;
    double contrast_gamma = 1.0;
    double brightness_offset = 0.0;
    double blur_sigma = 0.6;
};

using DeviceRegistry = std::map<std::string, DeviceProfile>;

DeviceRegistry default_device_registry();
DeviceRegistry load_device_registry(const std::string& json_path);
void save_device_registry(const DeviceRegistry& reg, const std::string& json_path);

// Renders synthetic cranium-ring phantoms with plane-appropriate inner
// structures and a consistent image/mask pair per sample.
std::vector<Sample> phantom_generate(int count, Plane plane, const std::string& device_name,
                                     const DeviceProfile& profile, std::uint64_t seed);

}  // namespace fetalseg

#endif
