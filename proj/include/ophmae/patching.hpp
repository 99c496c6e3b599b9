#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ophmae/core_types.hpp"
#include "ophmae/rng.hpp"

namespace ophmae {

enum class Modality { OCT, ENFACE };
std::string to_string(Modality m);

struct PatchSpec {
    enum class Kind { VOL_16x16x5, IMG_16x16 };
    Kind kind = Kind::VOL_16x16x5;
    int patch_h = 16;
    int patch_w = 16;
    int patch_d = 5;  // 1 for images

    static PatchSpec volume() { return {Kind::VOL_16x16x5, 16, 16, 5}; }
    static PatchSpec image() { return {Kind::IMG_16x16, 16, 16, 1}; }
    int patch_len() const { return patch_h * patch_w * patch_d; }
};

// Token grid; gd == 1 for planar inputs. Token index <-> grid coordinate is
// the fixed bijection (gd*GH + gh)*GW + gw.
struct GridShape {
    int gh = 0;
    int gw = 0;
    int gd = 1;
    int count() const { return gh * gw * gd; }
    int index_of(int h, int w, int d) const { return (d * gh + h) * gw + w; }
};

// Flattened non-overlapping patches in token-index order. Patch elements are
// flattened (dd, hh, ww) nested, matching the slice-major voxel layout.
struct PatchSet {
    Eigen::MatrixXd patches;                      // N x patch_len
    std::vector<std::array<int, 3>> positions;    // (gh, gw, gd) per token
    GridShape grid;
    Modality modality = Modality::OCT;
};

PatchSet partition_volume(const OctVolume& vol, const PatchSpec& spec);
PatchSet partition_image(const EnFaceImage& img, const PatchSpec& spec);

// Exact inverses of the partition ops (identity metadata supplied by caller).
OctVolume unpartition_volume(const PatchSet& set, const PatchSpec& spec);
EnFaceImage unpartition_image(const PatchSet& set, const PatchSpec& spec);

// Initial values for the learnable positional table: seeded small-variance
// normal, one row per position. Distinct positions get distinct rows.
Eigen::MatrixXd positional_encoding_init(const std::vector<std::array<int, 3>>& positions,
                                         int embed_dim, uint64_t seed);

// Linear resampling along depth to target_d slices (sampled at slice centers,
// clamped at the ends). target_d == D returns the input unchanged.
OctVolume depth_resample(const OctVolume& vol, int target_d);

struct MaskView {
    std::vector<uint8_t> masked;  // length N, 1 = masked
    double ratio = 0.0;

    int size() const { return static_cast<int>(masked.size()); }
    int masked_count() const;
    std::vector<int> masked_indices() const;
    std::vector<int> visible_indices() const;
};

// Exactly round_half_away(ratio*N) masked indices, uniform without replacement.
MaskView sample_mask_view(int n, double ratio, Rng& rng);

struct MaskEnsemble {
    std::vector<MaskView> views;
    // unordered view pair -> sorted indices masked in both
    std::map<std::pair<int, int>, std::vector<int>> pairwise_overlap;

    int k() const { return static_cast<int>(views.size()); }
};

MaskEnsemble sample_mask_ensemble(int n, double ratio, int k, Rng& rng);

// Reproducibility-audit format: view bitstrings hex-encoded; overlaps are
// recomputed on load.
std::string mask_ensemble_to_json(const MaskEnsemble& ensemble);
MaskEnsemble mask_ensemble_from_json(const std::string& text);

}  // namespace ophmae
