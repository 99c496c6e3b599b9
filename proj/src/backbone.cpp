#include "ophmae/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ophmae/io.hpp"

namespace ophmae {

using ad::Mat;
using ad::Var;

std::string to_string(RelationDirection d) {
    return d == RelationDirection::OCT_QUERIES_IR ? "OCT_QUERIES_IR" : "IR_QUERIES_OCT";
}

// ---------------------------------------------------------------- config ----

std::vector<int> ModelConfig::resolved_fusion_layers() const {
    if (!fusion_layers.empty()) return fusion_layers;
    const int min_depth = std::min(enc_depth_oct, enc_depth_ir);
    if (min_depth == 0) return {};
    return {min_depth / 2};
}

void ModelConfig::validate() const {
    if (embed_dim <= 0 || embed_dim % n_heads != 0)
        throw InvalidConfig("embed_dim must be a positive multiple of n_heads");
    if (dec_dim <= 0 || dec_dim % n_heads != 0)
        throw InvalidConfig("dec_dim must be a positive multiple of n_heads");
    if (dec_dim > embed_dim) throw InvalidConfig("decoder must be narrower than the encoder");
    const int min_depth = std::min(enc_depth_oct, enc_depth_ir);
    if (enc_depth_oct < 0 || enc_depth_ir < 0 || dec_depth < 0)
        throw InvalidConfig("depths must be non-negative");
    if (min_depth == 0 ? dec_depth != 0 : dec_depth >= min_depth)
        throw InvalidConfig("decoder must be shallower than both encoders");
    for (int f : resolved_fusion_layers())
        if (f < 0 || f >= std::max(1, min_depth))
            throw InvalidConfig("fusion layer index outside encoder blocks");
    if (!(mask_ratio_oct > 0.0 && mask_ratio_oct < 1.0) ||
        !(mask_ratio_ir > 0.0 && mask_ratio_ir < 1.0))
        throw InvalidRatio("mask ratios must lie in (0,1)");
    if (k_views < 1) throw InvalidK("k_views must be >= 1");
    if (relation_mask_ratio < 0.0 || relation_mask_ratio >= 1.0)
        throw InvalidRatio("relation_mask_ratio must lie in [0,1)");
    if (lambda_recon < 0 || lambda_cross < 0 || lambda_consistency < 0)
        throw NegativeWeight("loss weights must be >= 0");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"embed_dim", embed_dim},
            {"enc_depth_oct", enc_depth_oct},
            {"enc_depth_ir", enc_depth_ir},
            {"n_heads", n_heads},
            {"fusion_layers", fusion_layers},
            {"dec_dim", dec_dim},
            {"dec_depth", dec_depth},
            {"mask_ratio_oct", mask_ratio_oct},
            {"mask_ratio_ir", mask_ratio_ir},
            {"k_views", k_views},
            {"relation_mask_ratio", relation_mask_ratio},
            {"lambda_recon", lambda_recon},
            {"lambda_cross", lambda_cross},
            {"lambda_consistency", lambda_consistency},
            {"per_patch_norm", per_patch_norm}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.enc_depth_oct = j.value("enc_depth_oct", c.enc_depth_oct);
    c.enc_depth_ir = j.value("enc_depth_ir", c.enc_depth_ir);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.fusion_layers = j.value("fusion_layers", c.fusion_layers);
    c.dec_dim = j.value("dec_dim", c.dec_dim);
    c.dec_depth = j.value("dec_depth", c.dec_depth);
    c.mask_ratio_oct = j.value("mask_ratio_oct", c.mask_ratio_oct);
    c.mask_ratio_ir = j.value("mask_ratio_ir", c.mask_ratio_ir);
    c.k_views = j.value("k_views", c.k_views);
    c.relation_mask_ratio = j.value("relation_mask_ratio", c.relation_mask_ratio);
    c.lambda_recon = j.value("lambda_recon", c.lambda_recon);
    c.lambda_cross = j.value("lambda_cross", c.lambda_cross);
    c.lambda_consistency = j.value("lambda_consistency", c.lambda_consistency);
    c.per_patch_norm = j.value("per_patch_norm", c.per_patch_norm);
    return c;
}

nlohmann::json GridSpec::to_json() const {
    return {{"vol", {vol.gh, vol.gw, vol.gd}}, {"img", {img.gh, img.gw, img.gd}}};
}

GridSpec GridSpec::from_json(const nlohmann::json& j) {
    GridSpec g;
    auto v = j.at("vol");
    g.vol = {v.at(0).get<int>(), v.at(1).get<int>(), v.at(2).get<int>()};
    auto i = j.at("img");
    g.img = {i.at(0).get<int>(), i.at(1).get<int>(), i.at(2).get<int>()};
    return g;
}

// ----------------------------------------------------------------- model ----

namespace {

Mat init_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = stddev * rng.normal();
    return m;
}

std::vector<std::array<int, 3>> grid_positions(const GridShape& grid) {
    std::vector<std::array<int, 3>> pos(static_cast<size_t>(grid.count()));
    for (int gd = 0; gd < grid.gd; ++gd)
        for (int gh = 0; gh < grid.gh; ++gh)
            for (int gw = 0; gw < grid.gw; ++gw)
                pos[static_cast<size_t>(grid.index_of(gh, gw, gd))] = {gh, gw, gd};
    return pos;
}

std::vector<int> all_token_ids(int n) {
    std::vector<int> ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
    return ids;
}

constexpr double kInitStd = 0.02;

}  // namespace

Model::BlockParams Model::make_block(const std::string& prefix, int dim, Rng& rng) {
    BlockParams bp;
    bp.ln1_g = store_.add(prefix + "/ln1/g", Mat::Ones(1, dim));
    bp.ln1_b = store_.add(prefix + "/ln1/b", Mat::Zero(1, dim));
    bp.wq = store_.add(prefix + "/attn/wq", init_normal(dim, dim, kInitStd, rng));
    bp.bq = store_.add(prefix + "/attn/bq", Mat::Zero(1, dim));
    bp.wk = store_.add(prefix + "/attn/wk", init_normal(dim, dim, kInitStd, rng));
    bp.bk = store_.add(prefix + "/attn/bk", Mat::Zero(1, dim));
    bp.wv = store_.add(prefix + "/attn/wv", init_normal(dim, dim, kInitStd, rng));
    bp.bv = store_.add(prefix + "/attn/bv", Mat::Zero(1, dim));
    bp.wo = store_.add(prefix + "/attn/wo", init_normal(dim, dim, kInitStd, rng));
    bp.bo = store_.add(prefix + "/attn/bo", Mat::Zero(1, dim));
    bp.ln2_g = store_.add(prefix + "/ln2/g", Mat::Ones(1, dim));
    bp.ln2_b = store_.add(prefix + "/ln2/b", Mat::Zero(1, dim));
    bp.w1 = store_.add(prefix + "/mlp/w1", init_normal(dim, 4 * dim, kInitStd, rng));
    bp.b1 = store_.add(prefix + "/mlp/b1", Mat::Zero(1, 4 * dim));
    bp.w2 = store_.add(prefix + "/mlp/w2", init_normal(4 * dim, dim, kInitStd, rng));
    bp.b2 = store_.add(prefix + "/mlp/b2", Mat::Zero(1, dim));
    return bp;
}

Model::Model(ModelConfig config, GridSpec grids, uint64_t seed)
    : config_(std::move(config)), grids_(grids) {
    config_.validate();
    if (grids_.vol.count() < 1 || grids_.img.count() < 1)
        throw ShapeMismatch("token grids must be non-empty");

    positions_vol_ = grid_positions(grids_.vol);
    positions_img_ = grid_positions(grids_.img);

    Rng rng(seed);
    const int c = config_.embed_dim;
    const int dd = config_.dec_dim;
    const int p_vol = PatchSpec::volume().patch_len();
    const int p_img = PatchSpec::image().patch_len();

    auto build_stream = [&](const std::string& name, int patch_len, int depth,
                            const std::vector<std::array<int, 3>>& positions) {
        StreamParams sp;
        sp.embed_w = store_.add(name + "/embed/w", init_normal(patch_len, c, kInitStd, rng));
        sp.embed_b = store_.add(name + "/embed/b", Mat::Zero(1, c));
        sp.pos = store_.add(name + "/pos",
                            positional_encoding_init(positions, c, rng.next_u64()));
        for (int i = 0; i < depth; ++i)
            sp.blocks.push_back(make_block(name + "/enc" + std::to_string(i), c, rng));
        return sp;
    };
    enc_oct_ = build_stream("oct", p_vol, config_.enc_depth_oct, positions_vol_);
    enc_ir_ = build_stream("ir", p_img, config_.enc_depth_ir, positions_img_);

    for (int layer : config_.resolved_fusion_layers()) {
        FusionParams fp;
        fp.layer = layer;
        const std::string pre = "fusion" + std::to_string(layer);
        fp.ln_oct_g = store_.add(pre + "/oct/ln/g", Mat::Ones(1, c));
        fp.ln_oct_b = store_.add(pre + "/oct/ln/b", Mat::Zero(1, c));
        fp.ln_ir_g = store_.add(pre + "/ir/ln/g", Mat::Ones(1, c));
        fp.ln_ir_b = store_.add(pre + "/ir/ln/b", Mat::Zero(1, c));
        fp.emb_oct = store_.add(pre + "/oct/emb", init_normal(1, c, kInitStd, rng));
        fp.emb_ir = store_.add(pre + "/ir/emb", init_normal(1, c, kInitStd, rng));
        auto build_dir = [&](const std::string& dir) {
            FusionDirParams dp;
            dp.wq = store_.add(pre + "/" + dir + "/wq", init_normal(c, c, kInitStd, rng));
            dp.bq = store_.add(pre + "/" + dir + "/bq", Mat::Zero(1, c));
            dp.wk = store_.add(pre + "/" + dir + "/wk", init_normal(c, c, kInitStd, rng));
            dp.bk = store_.add(pre + "/" + dir + "/bk", Mat::Zero(1, c));
            dp.wv = store_.add(pre + "/" + dir + "/wv", init_normal(c, c, kInitStd, rng));
            dp.bv = store_.add(pre + "/" + dir + "/bv", Mat::Zero(1, c));
            dp.wo = store_.add(pre + "/" + dir + "/wo", init_normal(c, c, kInitStd, rng));
            dp.bo = store_.add(pre + "/" + dir + "/bo", Mat::Zero(1, c));
            return dp;
        };
        fp.oct_q = build_dir("oct_q");
        fp.ir_q = build_dir("ir_q");
        fusion_.push_back(std::move(fp));
    }

    mask_token_ = store_.add("dec/mask_token", init_normal(1, dd, kInitStd, rng));

    auto build_decoder = [&](const std::string& name, int patch_len,
                             const std::vector<std::array<int, 3>>& positions) {
        DecoderParams dp;
        dp.proj_w = store_.add(name + "/dec/proj/w", init_normal(c, dd, kInitStd, rng));
        dp.proj_b = store_.add(name + "/dec/proj/b", Mat::Zero(1, dd));
        dp.pos = store_.add(name + "/dec/pos",
                            positional_encoding_init(positions, dd, rng.next_u64()));
        for (int i = 0; i < config_.dec_depth; ++i)
            dp.blocks.push_back(make_block(name + "/dec" + std::to_string(i), dd, rng));
        dp.ln_g = store_.add(name + "/dec/ln/g", Mat::Ones(1, dd));
        dp.ln_b = store_.add(name + "/dec/ln/b", Mat::Zero(1, dd));
        dp.head_w = store_.add(name + "/dec/head/w", init_normal(dd, patch_len, kInitStd, rng));
        dp.head_b = store_.add(name + "/dec/head/b", Mat::Zero(1, patch_len));
        return dp;
    };
    dec_oct_ = build_decoder("oct", p_vol, positions_vol_);
    dec_ir_ = build_decoder("ir", p_img, positions_img_);

    for (int layer : config_.resolved_fusion_layers()) {
        RelHeadParams rp;
        rp.layer = layer;
        const std::string pre = "rel" + std::to_string(layer);
        rp.oct_q_wq = store_.add(pre + "/oct_q/wq", init_normal(dd, dd, kInitStd, rng));
        rp.oct_q_wk = store_.add(pre + "/oct_q/wk", init_normal(dd, dd, kInitStd, rng));
        rp.oct_q_bias = store_.add(pre + "/oct_q/bias", Mat::Zero(1, 1));
        rp.ir_q_wq = store_.add(pre + "/ir_q/wq", init_normal(dd, dd, kInitStd, rng));
        rp.ir_q_wk = store_.add(pre + "/ir_q/wk", init_normal(dd, dd, kInitStd, rng));
        rp.ir_q_bias = store_.add(pre + "/ir_q/bias", Mat::Zero(1, 1));
        rel_heads_.push_back(std::move(rp));
    }
}

const Model::StreamParams& Model::stream(Modality m) const {
    return m == Modality::OCT ? enc_oct_ : enc_ir_;
}

const Model::DecoderParams& Model::decoder(Modality m) const {
    return m == Modality::OCT ? dec_oct_ : dec_ir_;
}

const Model::FusionParams& Model::fusion_at(int layer) const {
    for (const auto& f : fusion_)
        if (f.layer == layer) return f;
    throw InvalidConfig("no fusion block at layer " + std::to_string(layer));
}

const Model::RelHeadParams& Model::rel_head_at(int layer) const {
    for (const auto& r : rel_heads_)
        if (r.layer == layer) return r;
    throw InvalidConfig("no relation head at layer " + std::to_string(layer));
}

int Model::token_count(Modality m) const {
    return m == Modality::OCT ? grids_.vol.count() : grids_.img.count();
}

int Model::patch_len(Modality m) const {
    return m == Modality::OCT ? PatchSpec::volume().patch_len() : PatchSpec::image().patch_len();
}

const std::vector<std::array<int, 3>>& Model::positions(Modality m) const {
    return m == Modality::OCT ? positions_vol_ : positions_img_;
}

Var Model::embed(Modality m, const Mat& patches, const std::vector<int>& token_ids) const {
    const StreamParams& sp = stream(m);
    if (patches.cols() != patch_len(m)) throw ShapeMismatch("patch length mismatch in embed");
    if (patches.rows() != static_cast<Eigen::Index>(token_ids.size()))
        throw ShapeMismatch("token id count mismatch in embed");
    Var x = ad::add_rowvec(ad::matmul(ad::constant(patches), sp.embed_w), sp.embed_b);
    return ad::add(x, ad::gather_rows(sp.pos, token_ids));
}

Var Model::mhsa(const Var& normed, const BlockParams& bp) const {
    const int heads = config_.n_heads;
    const Eigen::Index dim = normed->cols();
    const Eigen::Index dh = dim / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = ad::add_rowvec(ad::matmul(normed, bp.wq), bp.bq);
    Var k = ad::add_rowvec(ad::matmul(normed, bp.wk), bp.bk);
    Var v = ad::add_rowvec(ad::matmul(normed, bp.wv), bp.bv);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = ad::slice_cols(q, h * dh, dh);
        Var kh = ad::slice_cols(k, h * dh, dh);
        Var vh = ad::slice_cols(v, h * dh, dh);
        Var probs = ad::softmax_rows(ad::scale(ad::matmul(qh, kh, false, true), scale_factor));
        head_outs.push_back(ad::matmul(probs, vh));
    }
    return ad::add_rowvec(ad::matmul(ad::concat_cols(head_outs), bp.wo), bp.bo);
}

Var Model::attention_block(const Var& x, const BlockParams& bp) const {
    Var h = ad::layer_norm(x, bp.ln1_g, bp.ln1_b);
    Var y = ad::add(x, mhsa(h, bp));
    Var h2 = ad::layer_norm(y, bp.ln2_g, bp.ln2_b);
    Var m = ad::add_rowvec(ad::matmul(ad::gelu(ad::add_rowvec(ad::matmul(h2, bp.w1), bp.b1)),
                                      bp.w2),
                           bp.b2);
    return ad::add(y, m);
}

Var Model::encode(Modality m, const Var& tokens) const {
    Var x = tokens;
    for (const auto& bp : stream(m).blocks) x = attention_block(x, bp);
    return x;
}

namespace {

void check_relation_rows(const Mat& rel) {
    for (Eigen::Index r = 0; r < rel.rows(); ++r) {
        const double s = rel.row(r).sum();
        if (std::abs(s - 1.0) > 1e-5)
            throw ShapeMismatch("relation row does not sum to 1");
        if (rel.row(r).minCoeff() < 0.0)
            throw ShapeMismatch("relation entry below 0");
    }
}

}  // namespace

Model::FusionOut Model::fuse_bidirectional(int layer, const Var& z_oct, const Var& z_ir,
                                           const Mat* keep_oct_q, const Mat* keep_ir_q) const {
    if (z_oct->cols() != z_ir->cols())
        throw DimMismatch("fusion requires matching channel dims");
    const FusionParams& fp = fusion_at(layer);
    const int heads = config_.n_heads;
    const Eigen::Index dim = z_oct->cols();
    const Eigen::Index dh = dim / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

    Var a_oct = ad::add_rowvec(ad::layer_norm(z_oct, fp.ln_oct_g, fp.ln_oct_b), fp.emb_oct);
    Var a_ir = ad::add_rowvec(ad::layer_norm(z_ir, fp.ln_ir_g, fp.ln_ir_b), fp.emb_ir);

    auto cross = [&](const Var& aq, const Var& akv, const FusionDirParams& dp,
                     const Mat* keep) -> std::pair<Var, Var> {
        Var q = ad::add_rowvec(ad::matmul(aq, dp.wq), dp.bq);
        Var k = ad::add_rowvec(ad::matmul(akv, dp.wk), dp.bk);
        Var v = ad::add_rowvec(ad::matmul(akv, dp.wv), dp.bv);
        std::vector<Var> head_outs;
        Var rel;
        for (int h = 0; h < heads; ++h) {
            Var qh = ad::slice_cols(q, h * dh, dh);
            Var kh = ad::slice_cols(k, h * dh, dh);
            Var vh = ad::slice_cols(v, h * dh, dh);
            Var probs = ad::softmax_rows(ad::scale(ad::matmul(qh, kh, false, true), scale_factor));
            rel = h == 0 ? probs : ad::add(rel, probs);
            Var applied = keep ? ad::hadamard_const(probs, *keep) : probs;
            head_outs.push_back(ad::matmul(applied, vh));
        }
        rel = ad::scale(rel, 1.0 / heads);
        check_relation_rows(rel->value);
        Var out = ad::add_rowvec(ad::matmul(ad::concat_cols(head_outs), dp.wo), dp.bo);
        return {out, rel};
    };

    auto [out_oct, rel_oct_q] = cross(a_oct, a_ir, fp.oct_q, keep_oct_q);
    auto [out_ir, rel_ir_q] = cross(a_ir, a_oct, fp.ir_q, keep_ir_q);

    FusionOut fo;
    fo.z_oct = ad::add(z_oct, out_oct);
    fo.z_ir = ad::add(z_ir, out_ir);
    fo.rel_oct_q = rel_oct_q;
    fo.rel_ir_q = rel_ir_q;
    return fo;
}

Model::DualOut Model::encode_dual(const Var& oct_tokens, const Var& ir_tokens,
                                  const std::vector<std::pair<Mat, Mat>>* keep) const {
    const std::vector<int> layers = config_.resolved_fusion_layers();
    if (keep && keep->size() != layers.size())
        throw ShapeMismatch("keep masks do not match fusion layer count");
    DualOut out;
    out.z_oct = oct_tokens;
    out.z_ir = ir_tokens;
    const int depth = std::max(config_.enc_depth_oct, config_.enc_depth_ir);
    for (int i = 0; i < depth; ++i) {
        if (i < config_.enc_depth_oct)
            out.z_oct = attention_block(out.z_oct, enc_oct_.blocks[static_cast<size_t>(i)]);
        if (i < config_.enc_depth_ir)
            out.z_ir = attention_block(out.z_ir, enc_ir_.blocks[static_cast<size_t>(i)]);
        for (size_t f = 0; f < layers.size(); ++f) {
            if (layers[f] != i) continue;
            const Mat* keep_oct = keep ? &(*keep)[f].first : nullptr;
            const Mat* keep_ir = keep ? &(*keep)[f].second : nullptr;
            FusionOut fo = fuse_bidirectional(i, out.z_oct, out.z_ir, keep_oct, keep_ir);
            out.z_oct = fo.z_oct;
            out.z_ir = fo.z_ir;
            out.fusion.emplace_back(i, std::move(fo));
        }
    }
    return out;
}

Model::DecodeOut Model::decode(Modality m, const Var& latents_visible, const MaskView& view) const {
    const DecoderParams& dp = decoder(m);
    const int n = token_count(m);
    if (view.size() != n) throw MaskMismatch("mask view length does not match token grid");
    const std::vector<int> visible = view.visible_indices();
    const std::vector<int> masked = view.masked_indices();
    if (latents_visible->rows() != static_cast<Eigen::Index>(visible.size()))
        throw MaskMismatch("latent row count does not match visible set");

    Var proj = ad::add_rowvec(ad::matmul(latents_visible, dp.proj_w), dp.proj_b);
    Var full = ad::assemble_rows(n, proj, visible, mask_token_, masked);
    full = ad::add(full, dp.pos);
    for (const auto& bp : dp.blocks) full = attention_block(full, bp);
    Var tokens = ad::layer_norm(full, dp.ln_g, dp.ln_b);
    Var recon_full = ad::add_rowvec(ad::matmul(tokens, dp.head_w), dp.head_b);

    DecodeOut out;
    out.tokens = tokens;
    out.recon_masked = ad::gather_rows(recon_full, masked);
    return out;
}

Var Model::predict_relation(int layer, RelationDirection dir, const Var& dec_tokens_q,
                            const Var& dec_tokens_k) const {
    const RelHeadParams& rp = rel_head_at(layer);
    const bool oct_q = dir == RelationDirection::OCT_QUERIES_IR;
    const Var& wq = oct_q ? rp.oct_q_wq : rp.ir_q_wq;
    const Var& wk = oct_q ? rp.oct_q_wk : rp.ir_q_wk;
    const Var& bias = oct_q ? rp.oct_q_bias : rp.ir_q_bias;
    const double s = 1.0 / std::sqrt(static_cast<double>(config_.dec_dim));
    Var scores = ad::scale(
        ad::matmul(ad::matmul(dec_tokens_q, wq), ad::matmul(dec_tokens_k, wk), false, true), s);
    return ad::add_scalar_bias(scores, bias);
}

std::vector<std::string> Model::fusion_param_names() const {
    std::vector<std::string> names;
    for (const auto& [name, var] : store_.ordered())
        if (name.rfind("fusion", 0) == 0) names.push_back(name);
    return names;
}

std::vector<std::string> Model::encoder_and_fusion_param_names() const {
    std::vector<std::string> names;
    for (const auto& [name, var] : store_.ordered()) {
        const bool enc = name.find("/enc") != std::string::npos ||
                         name.find("/embed/") != std::string::npos ||
                         (name.find("/pos") != std::string::npos &&
                          name.find("/dec/") == std::string::npos);
        const bool fus = name.rfind("fusion", 0) == 0;
        if (enc || fus) names.push_back(name);
    }
    return names;
}

std::vector<std::string> Model::inference_path_param_names() const {
    return encoder_and_fusion_param_names();
}

void Model::zero_fusion_parameters() {
    for (const auto& name : fusion_param_names())
        store_.get(name)->value.setZero();
}

// --------------------------------------------------------- pretrain pass ----

Mat normalize_patch_rows(const Mat& patches, double eps) {
    Mat out(patches.rows(), patches.cols());
    for (Eigen::Index r = 0; r < patches.rows(); ++r) {
        const double mean = patches.row(r).mean();
        const double var = (patches.row(r).array() - mean).square().mean();
        out.row(r) = (patches.row(r).array() - mean) / std::sqrt(var + eps);
    }
    return out;
}

Mat sample_keep_matrix(int rows, int cols, double erase_ratio, Rng& rng) {
    if (erase_ratio < 0.0 || erase_ratio >= 1.0)
        throw InvalidRatio("erase ratio must lie in [0,1)");
    Mat keep = Mat::Ones(rows, cols);
    const int total = rows * cols;
    const int erase = round_half_away(erase_ratio * total);
    for (int flat : rng.sample_without_replacement(total, erase))
        keep(flat / cols, flat % cols) = 0.0;
    return keep;
}

PretrainOutputs forward_pretrain(const Model& model, const PairedSample& pair, Rng& rng,
                                 const ForwardOptions& options) {
    const ModelConfig& cfg = model.config();
    const PatchSet oct_set = partition_volume(pair.oct, PatchSpec::volume());
    const PatchSet img_set = partition_image(pair.enface, PatchSpec::image());
    const int n1 = model.token_count(Modality::OCT);
    const int n2 = model.token_count(Modality::ENFACE);
    if (oct_set.grid.count() != n1 || img_set.grid.count() != n2)
        throw ShapeMismatch("sample token grid does not match model grid");

    PretrainOutputs out;
    out.target_oct = cfg.per_patch_norm ? normalize_patch_rows(oct_set.patches) : oct_set.patches;
    out.target_ir = cfg.per_patch_norm ? normalize_patch_rows(img_set.patches) : img_set.patches;

    const std::vector<int> layers = cfg.resolved_fusion_layers();

    // pass 1: dense relation targets from the full token sets, detached
    if (options.frozen_dense) {
        out.dense_relations = *options.frozen_dense;
    } else if (!layers.empty()) {
        Var oct_full = model.embed(Modality::OCT, oct_set.patches, all_token_ids(n1));
        Var ir_full = model.embed(Modality::ENFACE, img_set.patches, all_token_ids(n2));
        Model::DualOut pass1 = model.encode_dual(oct_full, ir_full);
        for (const auto& [layer, fo] : pass1.fusion) {
            out.dense_relations.push_back(
                {RelationDirection::OCT_QUERIES_IR, layer, fo.rel_oct_q->value});
            out.dense_relations.push_back(
                {RelationDirection::IR_QUERIES_OCT, layer, fo.rel_ir_q->value});
        }
    }

    out.ensemble_oct = sample_mask_ensemble(n1, cfg.mask_ratio_oct, cfg.k_views, rng);
    out.ensemble_ir = sample_mask_ensemble(n2, cfg.mask_ratio_ir, cfg.k_views, rng);

    auto dense_for = [&out](int layer, RelationDirection dir) -> const RelationMatrix& {
        for (const auto& d : out.dense_relations)
            if (d.layer == layer && d.direction == dir) return d;
        throw InvalidConfig("missing dense relation for layer " + std::to_string(layer));
    };

    for (int k = 0; k < cfg.k_views; ++k) {
        ViewOutputs vo;
        vo.view_oct = out.ensemble_oct.views[static_cast<size_t>(k)];
        vo.view_ir = out.ensemble_ir.views[static_cast<size_t>(k)];
        const std::vector<int> vis_oct = vo.view_oct.visible_indices();
        const std::vector<int> vis_ir = vo.view_ir.visible_indices();

        // relation erasure: indicators are sampled over the dense (full-grid)
        // matrices, then restricted to the visible rows/cols for pass 2
        std::vector<std::pair<Mat, Mat>> keep_visible;
        std::vector<std::pair<int, std::pair<Mat, Mat>>> keep_full;
        for (int layer : layers) {
            Mat keep_oct_q = sample_keep_matrix(n1, n2, cfg.relation_mask_ratio, rng);
            Mat keep_ir_q = sample_keep_matrix(n2, n1, cfg.relation_mask_ratio, rng);
            Mat sub_oct(vis_oct.size(), vis_ir.size());
            for (size_t r = 0; r < vis_oct.size(); ++r)
                for (size_t c = 0; c < vis_ir.size(); ++c)
                    sub_oct(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        keep_oct_q(vis_oct[r], vis_ir[c]);
            Mat sub_ir(vis_ir.size(), vis_oct.size());
            for (size_t r = 0; r < vis_ir.size(); ++r)
                for (size_t c = 0; c < vis_oct.size(); ++c)
                    sub_ir(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                        keep_ir_q(vis_ir[r], vis_oct[c]);
            keep_visible.emplace_back(std::move(sub_oct), std::move(sub_ir));
            keep_full.emplace_back(layer, std::make_pair(std::move(keep_oct_q), std::move(keep_ir_q)));
        }

        Mat oct_vis_patches(vis_oct.size(), oct_set.patches.cols());
        for (size_t i = 0; i < vis_oct.size(); ++i)
            oct_vis_patches.row(static_cast<Eigen::Index>(i)) = oct_set.patches.row(vis_oct[i]);
        Mat ir_vis_patches(vis_ir.size(), img_set.patches.cols());
        for (size_t i = 0; i < vis_ir.size(); ++i)
            ir_vis_patches.row(static_cast<Eigen::Index>(i)) = img_set.patches.row(vis_ir[i]);

        Var oct_tokens = model.embed(Modality::OCT, oct_vis_patches, vis_oct);
        Var ir_tokens = model.embed(Modality::ENFACE, ir_vis_patches, vis_ir);
        Model::DualOut pass2 =
            model.encode_dual(oct_tokens, ir_tokens, layers.empty() ? nullptr : &keep_visible);

        Model::DecodeOut dec_oct = model.decode(Modality::OCT, pass2.z_oct, vo.view_oct);
        Model::DecodeOut dec_ir = model.decode(Modality::ENFACE, pass2.z_ir, vo.view_ir);
        vo.recon_oct = dec_oct.recon_masked;
        vo.recon_ir = dec_ir.recon_masked;

        for (const auto& [layer, keeps] : keep_full) {
            for (RelationDirection dir :
                 {RelationDirection::OCT_QUERIES_IR, RelationDirection::IR_QUERIES_OCT}) {
                const bool oct_q = dir == RelationDirection::OCT_QUERIES_IR;
                const Mat& keep = oct_q ? keeps.first : keeps.second;
                PredictedRelation pr;
                pr.direction = dir;
                pr.layer = layer;
                pr.indicator = Mat::Ones(keep.rows(), keep.cols()) - keep;
                if (options.identity_relation_head) {
                    const RelationMatrix& dense = dense_for(layer, dir);
                    pr.values = ad::constant(dense.values.cwiseProduct(keep));
                } else {
                    pr.values = model.predict_relation(layer, dir,
                                                       oct_q ? dec_oct.tokens : dec_ir.tokens,
                                                       oct_q ? dec_ir.tokens : dec_oct.tokens);
                }
                vo.relations.push_back(std::move(pr));
            }
        }
        out.views.push_back(std::move(vo));
    }
    return out;
}

// ----------------------------------------------------------- checkpoints ----

namespace {
constexpr char kCkptMagic[8] = {'O', 'P', 'H', 'M', 'A', 'E', '0', '1'};

void append_bytes(std::string& buf, const void* data, size_t n) {
    buf.append(static_cast<const char*>(data), n);
}

template <typename T>
void append_pod(std::string& buf, T v) {
    append_bytes(buf, &v, sizeof(T));
}

template <typename T>
T read_pod(const std::string& buf, size_t& at) {
    if (at + sizeof(T) > buf.size()) throw CheckpointCorrupt("truncated checkpoint");
    T v;
    std::memcpy(&v, buf.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, Mat*>>& blobs) {
    // quantize in place first: the in-memory state after saving equals the
    // state a loader will reconstruct, so resume is bit-identical
    for (const auto& [name, mat] : blobs)
        for (Eigen::Index i = 0; i < mat->size(); ++i)
            (*mat)(i) = static_cast<double>(static_cast<float>((*mat)(i)));

    std::string buf;
    append_bytes(buf, kCkptMagic, sizeof(kCkptMagic));
    const std::string meta_text = meta.dump();
    append_pod<uint64_t>(buf, meta_text.size());
    append_bytes(buf, meta_text.data(), meta_text.size());
    append_pod<uint32_t>(buf, static_cast<uint32_t>(blobs.size()));
    for (const auto& [name, mat] : blobs) {
        append_pod<uint32_t>(buf, static_cast<uint32_t>(name.size()));
        append_bytes(buf, name.data(), name.size());
        append_pod<uint64_t>(buf, static_cast<uint64_t>(mat->rows()));
        append_pod<uint64_t>(buf, static_cast<uint64_t>(mat->cols()));
        for (Eigen::Index i = 0; i < mat->size(); ++i)
            append_pod<float>(buf, static_cast<float>((*mat)(i)));
    }
    append_pod<uint64_t>(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path.string());
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw IoError("short checkpoint write: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw MissingCheckpoint(path.string());
    const std::string buf = read_text_file(path);
    if (buf.size() < sizeof(kCkptMagic) + sizeof(uint64_t) ||
        std::memcmp(buf.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
        throw CheckpointCorrupt("bad magic in " + path.string());
    const uint64_t stored = [&buf] {
        size_t at = buf.size() - sizeof(uint64_t);
        return read_pod<uint64_t>(buf, at);
    }();
    if (fnv1a64(buf.data(), buf.size() - sizeof(uint64_t)) != stored)
        throw CheckpointCorrupt("checksum mismatch in " + path.string());

    size_t at = sizeof(kCkptMagic);
    const auto meta_len = read_pod<uint64_t>(buf, at);
    if (at + meta_len > buf.size()) throw CheckpointCorrupt("truncated meta");
    LoadedCheckpoint out;
    out.meta = nlohmann::json::parse(buf.substr(at, meta_len));
    at += meta_len;
    const auto n_blobs = read_pod<uint32_t>(buf, at);
    for (uint32_t b = 0; b < n_blobs; ++b) {
        const auto name_len = read_pod<uint32_t>(buf, at);
        if (at + name_len > buf.size()) throw CheckpointCorrupt("truncated blob name");
        std::string name = buf.substr(at, name_len);
        at += name_len;
        const auto rows = static_cast<Eigen::Index>(read_pod<uint64_t>(buf, at));
        const auto cols = static_cast<Eigen::Index>(read_pod<uint64_t>(buf, at));
        Mat m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m(i) = static_cast<double>(read_pod<float>(buf, at));
        out.blobs.emplace(std::move(name), std::move(m));
    }
    return out;
}

uint64_t parameter_checksum(const ad::ParamStore& store, const std::vector<std::string>& names) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& name : names) {
        const Mat& m = store.get(name)->value;
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(m.data(), static_cast<size_t>(m.size()) * sizeof(double), h);
    }
    return h;
}

}  // namespace ophmae
