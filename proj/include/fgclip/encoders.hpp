#pragma once

#include <string>
#include <vector>

#include "fgclip/losses.hpp"
#include "fgclip/ops.hpp"
#include "fgclip/rng.hpp"
#include "fgclip/tokenizer.hpp"

namespace fgclip {

struct VisionConfig {
    long image_size = 32;
    long patch_size = 8;
    long channels = 3;
    long embed_dim = 32;
    long num_layers = 2;
    long num_heads = 4;
    double mlp_ratio = 4.0;
    long proj_dim = 32;  // shared embedding space

    long grid_side() const { return image_size / patch_size; }
    long num_patches() const { return grid_side() * grid_side(); }
    long mlp_hidden() const { return static_cast<long>(embed_dim * mlp_ratio); }
    void validate() const;
};

struct TextConfig {
    long vocab_size = 512;
    long embed_dim = 32;
    long num_layers = 2;
    long num_heads = 4;
    double mlp_ratio = 4.0;
    long proj_dim = 32;
    // Positional table geometry. With the reference values 77/20/4 the
    // extended table has 20 + 57*4 = 248 rows.
    long base_max_len = 77;
    long keep_prefix = 20;
    long interp_factor = 4;
    bool use_extended = false;

    long extended_max_len() const { return keep_prefix + (base_max_len - keep_prefix) * interp_factor; }
    long max_len() const { return use_extended ? extended_max_len() : base_max_len; }
    long mlp_hidden() const { return static_cast<long>(embed_dim * mlp_ratio); }
    void validate() const;
};

// Extends a positional table by keeping the first keep_prefix rows verbatim
// and linearly interpolating the rest: output row keep_prefix + j reads the
// source at coordinate keep_prefix + j/factor (the neighbor index is clamped
// to the last row, so every output row is a convex combination of at most two
// adjacent source rows). Pure function, not tape-recorded; the result is used
// as the trainable table.
TensorPtr extend_position_embeddings(const TensorPtr& table, long keep_prefix, long factor);

// Pre-norm transformer block shared by both encoders.
struct TransformerBlock {
    long num_heads = 1;
    TensorPtr ln1_g, ln1_b;
    TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
    TensorPtr ln2_g, ln2_b;
    TensorPtr fc1_w, fc1_b, fc2_w, fc2_b;

    void init(Rng& rng, long dim, long hidden, long heads);
    TensorPtr forward(const TensorPtr& x) const;
    // Token mixing disabled: attention output is each token's own value
    // projection through the output projection. Used by dense_tokens.
    TensorPtr forward_self_only(const TensorPtr& x) const;
    void collect_params(const std::string& prefix, std::vector<TensorPtr>& out) const;
};

struct EncoderOutput {
    TensorPtr cls_embedding;      // [1 x proj_dim]
    TensorPtr token_grid;         // [W, W, proj_dim], vision only, excludes CLS
    TensorPtr final_block_input;  // [(1+W^2) x d] cache for dense-feature extraction
};

class VisionEncoder {
  public:
    VisionConfig cfg;
    TensorPtr patch_proj_w, patch_proj_b;  // [ps*ps*C x d], [d]
    TensorPtr cls_token;                   // [1 x d]
    TensorPtr pos_embed;                   // [(1+P) x d]
    std::vector<TransformerBlock> blocks;
    TensorPtr final_ln_g, final_ln_b;
    TensorPtr proj;  // [d x proj_dim], no bias

    static VisionEncoder init(const VisionConfig& cfg, Rng& rng);
    EncoderOutput forward(const TensorPtr& image) const;
    // Patch embeddings before CLS/positional addition, [P x d].
    TensorPtr patch_tokens(const TensorPtr& image) const;
    void collect_params(std::vector<TensorPtr>& out) const;
};

class TextEncoder {
  public:
    TextConfig cfg;
    TensorPtr token_embed;  // [vocab x d]
    TensorPtr pos_embed;    // [max_len x d]
    std::vector<TransformerBlock> blocks;
    TensorPtr final_ln_g, final_ln_b;
    TensorPtr proj;

    static TextEncoder init(const TextConfig& cfg, Rng& rng);
    EncoderOutput forward(const TokenSequence& tokens) const;
    void collect_params(std::vector<TensorPtr>& out) const;
};

// The dual-encoder model plus the shared temperature; what training
// checkpoints serialize.
struct ClipModel {
    VisionConfig vcfg;
    TextConfig tcfg;
    VisionEncoder vision;
    TextEncoder text;
    TemperatureParam temperature;
    Vocabulary vocab;

    static ClipModel init(const VisionConfig& vcfg, const TextConfig& tcfg, Vocabulary vocab,
                          uint64_t seed);
    // Deterministic name -> tensor order; includes the temperature.
    std::vector<TensorPtr> parameters() const;
    void zero_grads() const;

    EncoderOutput encode_image(const TensorPtr& image) const { return vision.forward(image); }
    EncoderOutput encode_text(const std::string& caption) const;
};

}  // namespace fgclip
