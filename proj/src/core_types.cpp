#include "ophmae/core_types.hpp"

#include <algorithm>
#include <cmath>

namespace ophmae {

std::string to_string(Eye e) { return e == Eye::LEFT ? "LEFT" : "RIGHT"; }

std::string to_string(Laterality l) {
    switch (l) {
        case Laterality::LEFT: return "LEFT";
        case Laterality::RIGHT: return "RIGHT";
        default: return "BOTH";
    }
}

std::string to_string(AgeGroup a) {
    switch (a) {
        case AgeGroup::LT45: return "LT45";
        case AgeGroup::A45_64: return "A45_64";
        case AgeGroup::A65_74: return "A65_74";
        case AgeGroup::GE75: return "GE75";
        default: return "UNKNOWN";
    }
}

std::string to_string(Sex s) {
    switch (s) {
        case Sex::FEMALE: return "FEMALE";
        case Sex::MALE: return "MALE";
        default: return "UNKNOWN";
    }
}

std::string to_string(RaceEthnicity r) {
    switch (r) {
        case RaceEthnicity::NHW: return "NHW";
        case RaceEthnicity::NHB: return "NHB";
        case RaceEthnicity::HISPANIC: return "HISPANIC";
        case RaceEthnicity::OTHER: return "OTHER";
        default: return "UNKNOWN";
    }
}

Eye eye_from_string(const std::string& s) {
    if (s == "LEFT") return Eye::LEFT;
    if (s == "RIGHT") return Eye::RIGHT;
    throw InvalidConfig("unknown eye: " + s);
}

AgeGroup age_group_from_string(const std::string& s) {
    if (s == "LT45") return AgeGroup::LT45;
    if (s == "A45_64") return AgeGroup::A45_64;
    if (s == "A65_74") return AgeGroup::A65_74;
    if (s == "GE75") return AgeGroup::GE75;
    if (s == "UNKNOWN") return AgeGroup::UNKNOWN;
    throw InvalidConfig("unknown age group: " + s);
}

Sex sex_from_string(const std::string& s) {
    if (s == "FEMALE") return Sex::FEMALE;
    if (s == "MALE") return Sex::MALE;
    if (s == "UNKNOWN") return Sex::UNKNOWN;
    throw InvalidConfig("unknown sex: " + s);
}

RaceEthnicity race_from_string(const std::string& s) {
    if (s == "NHW") return RaceEthnicity::NHW;
    if (s == "NHB") return RaceEthnicity::NHB;
    if (s == "HISPANIC") return RaceEthnicity::HISPANIC;
    if (s == "OTHER") return RaceEthnicity::OTHER;
    if (s == "UNKNOWN") return RaceEthnicity::UNKNOWN;
    throw InvalidConfig("unknown race/ethnicity: " + s);
}

namespace {

void check_unit_range(const std::vector<double>& vals, const std::string& what) {
    for (double v : vals) {
        if (!std::isfinite(v)) throw NonFiniteInput(what);
        if (v < 0.0 || v > 1.0) throw DegenerateRange(what + " value outside [0,1]");
    }
}

}  // namespace

void OctVolume::validate() const {
    if (height <= 0 || width <= 0 || depth <= 0)
        throw ShapeMismatch("volume dims must be positive");
    if (height % 16 != 0 || width % 16 != 0)
        throw ShapeMismatch("volume H and W must divide by 16");
    if (depth % 5 != 0)
        throw ShapeMismatch("volume D must divide by 5 (resample first)");
    if (voxels.size() != static_cast<size_t>(height) * width * depth)
        throw ShapeMismatch("voxel count does not match dims");
    check_unit_range(voxels, "volume " + scan_id);
}

void EnFaceImage::validate() const {
    if (height <= 0 || width <= 0)
        throw ShapeMismatch("image dims must be positive");
    if (height % 16 != 0 || width % 16 != 0)
        throw ShapeMismatch("image H and W must divide by 16");
    if (pixels.size() != static_cast<size_t>(height) * width)
        throw ShapeMismatch("pixel count does not match dims");
    check_unit_range(pixels, "image " + scan_id);
}

void LabelRecord::validate() const {
    if (num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
    if (label < 0 || label >= num_classes)
        throw LabelOutOfRange("label " + std::to_string(label) + " for " +
                              std::to_string(num_classes) + " classes");
}

std::vector<double> normalize_intensity(const std::vector<double>& raw, double lo, double hi) {
    if (!(lo < hi)) throw DegenerateRange("lo >= hi");
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw NonFiniteInput("lo/hi");
    std::vector<double> out(raw.size());
    const double span = hi - lo;
    for (size_t i = 0; i < raw.size(); ++i) {
        const double v = raw[i];
        if (!std::isfinite(v)) throw NonFiniteInput("raw[" + std::to_string(i) + "]");
        out[i] = std::clamp((v - lo) / span, 0.0, 1.0);
    }
    return out;
}

PairedSample validate_pair(const OctVolume& oct, const EnFaceImage& enface) {
    oct.validate();
    enface.validate();
    if (oct.patient_id != enface.patient_id)
        throw PairMismatch("patient_id (" + oct.patient_id + " vs " + enface.patient_id + ")");
    if (oct.eye != enface.eye)
        throw PairMismatch("eye (" + to_string(oct.eye) + " vs " + to_string(enface.eye) + ")");
    if (oct.scan_id != enface.scan_id)
        throw PairMismatch("scan_id (" + oct.scan_id + " vs " + enface.scan_id + ")");
    return PairedSample{oct, enface, std::nullopt};
}

}  // namespace ophmae
