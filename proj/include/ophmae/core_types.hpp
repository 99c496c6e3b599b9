#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ophmae/errors.hpp"

namespace ophmae {

enum class Eye { LEFT, RIGHT };
enum class Laterality { LEFT, RIGHT, BOTH };
enum class AgeGroup { LT45, A45_64, A65_74, GE75, UNKNOWN };
enum class Sex { FEMALE, MALE, UNKNOWN };
enum class RaceEthnicity { NHW, NHB, HISPANIC, OTHER, UNKNOWN };

std::string to_string(Eye e);
std::string to_string(Laterality l);
std::string to_string(AgeGroup a);
std::string to_string(Sex s);
std::string to_string(RaceEthnicity r);
Eye eye_from_string(const std::string& s);
AgeGroup age_group_from_string(const std::string& s);
Sex sex_from_string(const std::string& s);
RaceEthnicity race_from_string(const std::string& s);

// 3D scan volume, stored slice-major: voxel (h, w, d) lives at
// (d*H + h)*W + w, i.e. D stacked H-by-W cross sections.
struct OctVolume {
    std::vector<double> voxels;
    int height = 0;  // H
    int width = 0;   // W
    int depth = 0;   // D, number of cross sections
    std::string patient_id;
    std::string scan_id;
    Eye eye = Eye::LEFT;

    double at(int h, int w, int d) const {
        return voxels[static_cast<size_t>((d * height + h) * width + w)];
    }
    double& at(int h, int w, int d) {
        return voxels[static_cast<size_t>((d * height + h) * width + w)];
    }

    // Throws unless H, W divide by 16, D by 5, and every voxel is finite in [0,1].
    void validate() const;
};

// 2D planar image aligned to a volume, row-major (h*W + w).
struct EnFaceImage {
    std::vector<double> pixels;
    int height = 0;
    int width = 0;
    std::string patient_id;
    std::string scan_id;
    Eye eye = Eye::LEFT;

    double at(int h, int w) const { return pixels[static_cast<size_t>(h * width + w)]; }
    double& at(int h, int w) { return pixels[static_cast<size_t>(h * width + w)]; }

    void validate() const;
};

struct PairedSample {
    OctVolume oct;
    EnFaceImage enface;
    std::optional<std::string> acquisition_time;
};

struct LabelRecord {
    std::string task_id;
    int label = 0;
    int num_classes = 2;
    Laterality laterality = Laterality::BOTH;

    void validate() const;
};

struct DemographicRecord {
    AgeGroup age_group = AgeGroup::UNKNOWN;
    Sex sex = Sex::UNKNOWN;
    RaceEthnicity race_ethnicity = RaceEthnicity::UNKNOWN;
};

// clip((raw - lo) / (hi - lo), 0, 1) elementwise
std::vector<double> normalize_intensity(const std::vector<double>& raw, double lo, double hi);

// Returns the pair iff patient, eye and scan all agree; PairMismatch names
// the first differing field otherwise.
PairedSample validate_pair(const OctVolume& oct, const EnFaceImage& enface);

}  // namespace ophmae
