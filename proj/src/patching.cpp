#include "ophmae/patching.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace ophmae {

std::string to_string(Modality m) { return m == Modality::OCT ? "OCT" : "ENFACE"; }

namespace {

GridShape volume_grid(const OctVolume& vol, const PatchSpec& spec) {
    if (spec.kind != PatchSpec::Kind::VOL_16x16x5)
        throw ShapeMismatch("volume partition requires a volumetric patch spec");
    if (vol.height % spec.patch_h || vol.width % spec.patch_w || vol.depth % spec.patch_d)
        throw ShapeMismatch("patch spec does not divide volume dims");
    return {vol.height / spec.patch_h, vol.width / spec.patch_w, vol.depth / spec.patch_d};
}

GridShape image_grid(const EnFaceImage& img, const PatchSpec& spec) {
    if (spec.kind != PatchSpec::Kind::IMG_16x16)
        throw ShapeMismatch("image partition requires a planar patch spec");
    if (img.height % spec.patch_h || img.width % spec.patch_w)
        throw ShapeMismatch("patch spec does not divide image dims");
    return {img.height / spec.patch_h, img.width / spec.patch_w, 1};
}

}  // namespace

PatchSet partition_volume(const OctVolume& vol, const PatchSpec& spec) {
    const GridShape grid = volume_grid(vol, spec);
    PatchSet out;
    out.grid = grid;
    out.modality = Modality::OCT;
    out.patches.resize(grid.count(), spec.patch_len());
    out.positions.resize(static_cast<size_t>(grid.count()));
    for (int gd = 0; gd < grid.gd; ++gd)
        for (int gh = 0; gh < grid.gh; ++gh)
            for (int gw = 0; gw < grid.gw; ++gw) {
                const int t = grid.index_of(gh, gw, gd);
                out.positions[static_cast<size_t>(t)] = {gh, gw, gd};
                int e = 0;
                for (int dd = 0; dd < spec.patch_d; ++dd)
                    for (int hh = 0; hh < spec.patch_h; ++hh)
                        for (int ww = 0; ww < spec.patch_w; ++ww)
                            out.patches(t, e++) = vol.at(gh * spec.patch_h + hh,
                                                         gw * spec.patch_w + ww,
                                                         gd * spec.patch_d + dd);
            }
    return out;
}

PatchSet partition_image(const EnFaceImage& img, const PatchSpec& spec) {
    const GridShape grid = image_grid(img, spec);
    PatchSet out;
    out.grid = grid;
    out.modality = Modality::ENFACE;
    out.patches.resize(grid.count(), spec.patch_len());
    out.positions.resize(static_cast<size_t>(grid.count()));
    for (int gh = 0; gh < grid.gh; ++gh)
        for (int gw = 0; gw < grid.gw; ++gw) {
            const int t = grid.index_of(gh, gw, 0);
            out.positions[static_cast<size_t>(t)] = {gh, gw, 0};
            int e = 0;
            for (int hh = 0; hh < spec.patch_h; ++hh)
                for (int ww = 0; ww < spec.patch_w; ++ww)
                    out.patches(t, e++) = img.at(gh * spec.patch_h + hh, gw * spec.patch_w + ww);
        }
    return out;
}

OctVolume unpartition_volume(const PatchSet& set, const PatchSpec& spec) {
    OctVolume vol;
    vol.height = set.grid.gh * spec.patch_h;
    vol.width = set.grid.gw * spec.patch_w;
    vol.depth = set.grid.gd * spec.patch_d;
    vol.voxels.assign(static_cast<size_t>(vol.height) * vol.width * vol.depth, 0.0);
    if (set.patches.rows() != set.grid.count() || set.patches.cols() != spec.patch_len())
        throw ShapeMismatch("patch set inconsistent with grid/spec");
    for (int t = 0; t < set.grid.count(); ++t) {
        const auto [gh, gw, gd] = set.positions[static_cast<size_t>(t)];
        int e = 0;
        for (int dd = 0; dd < spec.patch_d; ++dd)
            for (int hh = 0; hh < spec.patch_h; ++hh)
                for (int ww = 0; ww < spec.patch_w; ++ww)
                    vol.at(gh * spec.patch_h + hh, gw * spec.patch_w + ww,
                           gd * spec.patch_d + dd) = set.patches(t, e++);
    }
    return vol;
}

EnFaceImage unpartition_image(const PatchSet& set, const PatchSpec& spec) {
    EnFaceImage img;
    img.height = set.grid.gh * spec.patch_h;
    img.width = set.grid.gw * spec.patch_w;
    img.pixels.assign(static_cast<size_t>(img.height) * img.width, 0.0);
    if (set.patches.rows() != set.grid.count() || set.patches.cols() != spec.patch_len())
        throw ShapeMismatch("patch set inconsistent with grid/spec");
    for (int t = 0; t < set.grid.count(); ++t) {
        const auto [gh, gw, gd] = set.positions[static_cast<size_t>(t)];
        (void)gd;
        int e = 0;
        for (int hh = 0; hh < spec.patch_h; ++hh)
            for (int ww = 0; ww < spec.patch_w; ++ww)
                img.at(gh * spec.patch_h + hh, gw * spec.patch_w + ww) = set.patches(t, e++);
    }
    return img;
}

Eigen::MatrixXd positional_encoding_init(const std::vector<std::array<int, 3>>& positions,
                                         int embed_dim, uint64_t seed) {
    if (embed_dim <= 0 || embed_dim % 2 != 0)
        throw ShapeMismatch("embed dim must be positive and even");
    Eigen::MatrixXd enc(static_cast<Eigen::Index>(positions.size()), embed_dim);
    for (size_t i = 0; i < positions.size(); ++i) {
        // one stream per grid coordinate so the row depends on the position,
        // not on its order within the list
        const auto& p = positions[i];
        const uint64_t key = Rng::splitmix64(seed ^ (static_cast<uint64_t>(p[0]) << 40) ^
                                             (static_cast<uint64_t>(p[1]) << 20) ^
                                             static_cast<uint64_t>(p[2]));
        Rng rng(key);
        for (int c = 0; c < embed_dim; ++c)
            enc(static_cast<Eigen::Index>(i), c) = 0.02 * rng.normal();
    }
    return enc;
}

OctVolume depth_resample(const OctVolume& vol, int target_d) {
    if (target_d < 2 || target_d % 5 != 0)
        throw InvalidTarget("target depth must be a multiple of 5 and >= 2");
    if (target_d == vol.depth) return vol;

    OctVolume out;
    out.height = vol.height;
    out.width = vol.width;
    out.depth = target_d;
    out.patient_id = vol.patient_id;
    out.scan_id = vol.scan_id;
    out.eye = vol.eye;
    out.voxels.resize(static_cast<size_t>(out.height) * out.width * out.depth);

    const double ratio = static_cast<double>(vol.depth) / static_cast<double>(target_d);
    for (int k = 0; k < target_d; ++k) {
        // sample at slice centers, clamped at the boundaries
        double s = (k + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(vol.depth - 1));
        const int lo = static_cast<int>(std::floor(s));
        const int hi = std::min(lo + 1, vol.depth - 1);
        const double w_hi = s - lo;
        for (int h = 0; h < vol.height; ++h)
            for (int w = 0; w < vol.width; ++w)
                out.at(h, w, k) = (1.0 - w_hi) * vol.at(h, w, lo) + w_hi * vol.at(h, w, hi);
    }
    return out;
}

int MaskView::masked_count() const {
    int m = 0;
    for (uint8_t b : masked) m += b;
    return m;
}

std::vector<int> MaskView::masked_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < size(); ++i)
        if (masked[static_cast<size_t>(i)]) idx.push_back(i);
    return idx;
}

std::vector<int> MaskView::visible_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < size(); ++i)
        if (!masked[static_cast<size_t>(i)]) idx.push_back(i);
    return idx;
}

MaskView sample_mask_view(int n, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidRatio("mask ratio must lie in (0,1)");
    if (n < 2) throw InvalidRatio("need at least 2 tokens to mask");
    const int m = round_half_away(ratio * n);
    MaskView view;
    view.ratio = ratio;
    view.masked.assign(static_cast<size_t>(n), 0);
    for (int i : rng.sample_without_replacement(n, m)) view.masked[static_cast<size_t>(i)] = 1;
    return view;
}

MaskEnsemble sample_mask_ensemble(int n, double ratio, int k, Rng& rng) {
    if (k < 1) throw InvalidK("K must be >= 1");
    MaskEnsemble ensemble;
    ensemble.views.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) ensemble.views.push_back(sample_mask_view(n, ratio, rng));
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            std::vector<int> overlap;
            for (int t = 0; t < n; ++t)
                if (ensemble.views[static_cast<size_t>(i)].masked[static_cast<size_t>(t)] &&
                    ensemble.views[static_cast<size_t>(j)].masked[static_cast<size_t>(t)])
                    overlap.push_back(t);
            ensemble.pairwise_overlap[{i, j}] = std::move(overlap);
        }
    return ensemble;
}

namespace {

std::string bits_to_hex(const std::vector<uint8_t>& bits) {
    static const char* digits = "0123456789abcdef";
    std::string hex;
    hex.reserve((bits.size() + 3) / 4);
    uint8_t nibble = 0;
    for (size_t i = 0; i < bits.size(); ++i) {
        nibble |= static_cast<uint8_t>((bits[i] & 1) << (i % 4));
        if (i % 4 == 3 || i + 1 == bits.size()) {
            hex += digits[nibble];
            nibble = 0;
        }
    }
    return hex;
}

std::vector<uint8_t> hex_to_bits(const std::string& hex, int n) {
    std::vector<uint8_t> bits(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const size_t pos = static_cast<size_t>(i) / 4;
        if (pos >= hex.size()) throw IoError("mask bitstring too short");
        const char c = hex[pos];
        int v = 0;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else throw IoError("bad hex digit in mask bitstring");
        bits[static_cast<size_t>(i)] = static_cast<uint8_t>((v >> (i % 4)) & 1);
    }
    return bits;
}

}  // namespace

std::string mask_ensemble_to_json(const MaskEnsemble& ensemble) {
    nlohmann::json j;
    j["n"] = ensemble.views.empty() ? 0 : ensemble.views.front().size();
    j["k"] = ensemble.k();
    j["ratio"] = ensemble.views.empty() ? 0.0 : ensemble.views.front().ratio;
    auto& views = j["views"] = nlohmann::json::array();
    for (const auto& v : ensemble.views) views.push_back(bits_to_hex(v.masked));
    return j.dump();
}

MaskEnsemble mask_ensemble_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    const int n = j.at("n").get<int>();
    const double ratio = j.at("ratio").get<double>();
    MaskEnsemble ensemble;
    for (const auto& hex : j.at("views")) {
        MaskView view;
        view.ratio = ratio;
        view.masked = hex_to_bits(hex.get<std::string>(), n);
        ensemble.views.push_back(std::move(view));
    }
    const int k = ensemble.k();
    for (int i = 0; i < k; ++i)
        for (int jdx = i + 1; jdx < k; ++jdx) {
            std::vector<int> overlap;
            for (int t = 0; t < n; ++t)
                if (ensemble.views[static_cast<size_t>(i)].masked[static_cast<size_t>(t)] &&
                    ensemble.views[static_cast<size_t>(jdx)].masked[static_cast<size_t>(t)])
                    overlap.push_back(t);
            ensemble.pairwise_overlap[{i, jdx}] = std::move(overlap);
        }
    return ensemble;
}

}  // namespace ophmae
