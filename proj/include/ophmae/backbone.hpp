#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ophmae/autodiff.hpp"
#include "ophmae/core_types.hpp"
#include "ophmae/patching.hpp"
#include "ophmae/rng.hpp"

namespace ophmae {

struct ModelConfig {
    int embed_dim = 192;
    int enc_depth_oct = 4;
    int enc_depth_ir = 4;
    int n_heads = 4;
    std::vector<int> fusion_layers;  // empty -> single middle block of the shallower encoder
    int dec_dim = 96;
    int dec_depth = 2;
    double mask_ratio_oct = 0.75;
    double mask_ratio_ir = 0.75;
    int k_views = 2;
    double relation_mask_ratio = 0.5;
    double lambda_recon = 1.0;
    double lambda_cross = 1.0;
    double lambda_consistency = 1.0;
    bool per_patch_norm = true;

    std::vector<int> resolved_fusion_layers() const;
    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct GridSpec {
    GridShape vol;  // token grid of the volume branch
    GridShape img;  // token grid of the planar branch

    nlohmann::json to_json() const;
    static GridSpec from_json(const nlohmann::json& j);
};

enum class RelationDirection { OCT_QUERIES_IR, IR_QUERIES_OCT };
std::string to_string(RelationDirection d);

// Head-averaged post-softmax cross-attention probabilities for one direction
// of one fusion layer. Rows are distributions over the key modality's tokens.
struct RelationMatrix {
    RelationDirection direction = RelationDirection::OCT_QUERIES_IR;
    int layer = 0;
    ad::Mat values;  // Nq x Nk
};

struct PredictedRelation {
    RelationDirection direction = RelationDirection::OCT_QUERIES_IR;
    int layer = 0;
    ad::Var values;    // Nq x Nk scores reconstructing the dense matrix
    ad::Mat indicator; // 1 where the dense entry was erased before pass 2
};

struct ViewOutputs {
    MaskView view_oct;
    MaskView view_ir;
    ad::Var recon_oct;  // m1 x 1280, rows in ascending masked-index order
    ad::Var recon_ir;   // m2 x 256
    std::vector<PredictedRelation> relations;
};

struct PretrainOutputs {
    std::vector<RelationMatrix> dense_relations;  // pass 1, detached targets
    MaskEnsemble ensemble_oct;
    MaskEnsemble ensemble_ir;
    std::vector<ViewOutputs> views;  // one per mask view
    ad::Mat target_oct;  // N1 x 1280 reconstruction targets (normalized if configured)
    ad::Mat target_ir;   // N2 x 256
};

struct ForwardOptions {
    // copy-through debug head: predicted relations equal the masked dense matrix
    bool identity_relation_head = false;
    // reuse precomputed dense targets instead of running pass 1 (used by the
    // gradient checker, which must hold targets constant while perturbing)
    const std::vector<RelationMatrix>* frozen_dense = nullptr;
};

class Model {
public:
    Model(ModelConfig config, GridSpec grids, uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const GridSpec& grids() const { return grids_; }
    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }

    // patch rows -> embedded tokens (+ positional rows for the given ids)
    ad::Var embed(Modality m, const ad::Mat& patches, const std::vector<int>& token_ids) const;

    // encoder blocks only, no fusion (single-modality route)
    ad::Var encode(Modality m, const ad::Var& tokens) const;

    struct FusionOut {
        ad::Var z_oct;
        ad::Var z_ir;
        ad::Var rel_oct_q;  // clean head-averaged probabilities, oct tokens as queries
        ad::Var rel_ir_q;
    };
    // One fusion layer. keep_* erase attention entries (0 = erased) before the
    // value aggregation; relation outputs are always the clean matrices.
    FusionOut fuse_bidirectional(int layer, const ad::Var& z_oct, const ad::Var& z_ir,
                                 const ad::Mat* keep_oct_q = nullptr,
                                 const ad::Mat* keep_ir_q = nullptr) const;

    struct DualOut {
        ad::Var z_oct;
        ad::Var z_ir;
        std::vector<std::pair<int, FusionOut>> fusion;  // per fusion layer
    };
    // Interleaved encoder blocks with fusion after each configured layer.
    // keep masks (one pair per fusion layer, same order) are optional.
    DualOut encode_dual(const ad::Var& oct_tokens, const ad::Var& ir_tokens,
                        const std::vector<std::pair<ad::Mat, ad::Mat>>* keep = nullptr) const;

    struct DecodeOut {
        ad::Var recon_masked;  // m x patch_len, ascending masked-index order
        ad::Var tokens;        // N x dec_dim, post-norm decoder tokens
    };
    DecodeOut decode(Modality m, const ad::Var& latents_visible, const MaskView& view) const;

    // bilinear score map over decoder tokens for one (layer, direction)
    ad::Var predict_relation(int layer, RelationDirection dir, const ad::Var& dec_tokens_q,
                             const ad::Var& dec_tokens_k) const;

    int token_count(Modality m) const;
    int patch_len(Modality m) const;
    const std::vector<std::array<int, 3>>& positions(Modality m) const;

    std::vector<std::string> encoder_and_fusion_param_names() const;
    std::vector<std::string> fusion_param_names() const;
    std::vector<std::string> inference_path_param_names() const;  // encoders + fusion
    void zero_fusion_parameters();

private:
    struct BlockParams {
        ad::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Var ln2_g, ln2_b, w1, b1, w2, b2;
    };
    struct StreamParams {
        ad::Var embed_w, embed_b, pos;
        std::vector<BlockParams> blocks;
    };
    struct FusionDirParams {
        ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct FusionParams {
        int layer = 0;
        ad::Var ln_oct_g, ln_oct_b, ln_ir_g, ln_ir_b, emb_oct, emb_ir;
        FusionDirParams oct_q, ir_q;
    };
    struct DecoderParams {
        ad::Var proj_w, proj_b, pos;
        std::vector<BlockParams> blocks;
        ad::Var ln_g, ln_b, head_w, head_b;
    };
    struct RelHeadParams {
        int layer = 0;
        ad::Var oct_q_wq, oct_q_wk, oct_q_bias;
        ad::Var ir_q_wq, ir_q_wk, ir_q_bias;
    };

    BlockParams make_block(const std::string& prefix, int dim, Rng& rng);
    ad::Var attention_block(const ad::Var& x, const BlockParams& bp) const;
    ad::Var mhsa(const ad::Var& normed, const BlockParams& bp) const;
    const StreamParams& stream(Modality m) const;
    const DecoderParams& decoder(Modality m) const;
    const FusionParams& fusion_at(int layer) const;
    const RelHeadParams& rel_head_at(int layer) const;

    ModelConfig config_;
    GridSpec grids_;
    ad::ParamStore store_;
    StreamParams enc_oct_, enc_ir_;
    std::vector<FusionParams> fusion_;
    ad::Var mask_token_;
    DecoderParams dec_oct_, dec_ir_;
    std::vector<RelHeadParams> rel_heads_;
    std::vector<std::array<int, 3>> positions_vol_, positions_img_;
};

// Per-patch target normalization: each row shifted/scaled to zero mean and
// unit variance (eps-floored).
ad::Mat normalize_patch_rows(const ad::Mat& patches, double eps = 1e-6);

// Two-pass pretraining forward. Pass 1 embeds and fuses the full token sets to
// produce detached dense relation targets; pass 2 runs each mask view through
// the visible-token encoders with relation entries erased at ratio
// relation_mask_ratio, reconstructs masked patches and predicts the dense
// relation matrices from decoder tokens.
PretrainOutputs forward_pretrain(const Model& model, const PairedSample& pair, Rng& rng,
                                 const ForwardOptions& options = {});

// 0/1 keep matrix with exactly round_half_away(ratio*rows*cols) zeros
ad::Mat sample_keep_matrix(int rows, int cols, double erase_ratio, Rng& rng);

// ---- checkpoint file ----
// [magic][u64 meta len][meta JSON][u32 blob count][blobs: name, rows, cols,
// f32 payload][u64 fnv1a checksum]. Saving quantizes the referenced matrices
// to f32 in place so that the in-memory state and the file agree bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, ad::Mat*>>& blobs);

struct LoadedCheckpoint {
    nlohmann::json meta;
    std::map<std::string, ad::Mat> blobs;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

uint64_t parameter_checksum(const ad::ParamStore& store, const std::vector<std::string>& names);

}  // namespace ophmae
