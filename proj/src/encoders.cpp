#include "fgclip/encoders.hpp"

#include <cmath>

#include "fgclip/error.hpp"

namespace fgclip {

namespace {

// Embedding-style tables (cls, positions, token embeddings) use a small fixed
// std; linear weights scale with fan-in so activations keep unit-order
// variance at any width.
constexpr double kEmbedStd = 0.02;

TensorPtr randn(Rng& rng, std::vector<long> shape, double std_dev, const std::string& name) {
    auto t = make_tensor(std::move(shape), /*requires_grad=*/true);
    for (auto& v : t->data) v = rng.next_normal() * std_dev;
    t->name = name;
    return t;
}

TensorPtr randn_fanin(Rng& rng, long fan_in, long fan_out, const std::string& name) {
    return randn(rng, {fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), name);
}

TensorPtr constant(std::vector<long> shape, double value, const std::string& name) {
    auto t = make_tensor(std::move(shape), /*requires_grad=*/true);
    for (auto& v : t->data) v = value;
    t->name = name;
    return t;
}

// [H, W, C] -> [P x ps*ps*C], patches in row-major order, each flattened as
// (dy, dx, channel).
TensorPtr patchify(const TensorPtr& image, long ps) {
    const long h = image->dim(0), w = image->dim(1), c = image->dim(2);
    const long grid = h / ps;
    const long plen = ps * ps * c;
    auto out = make_tensor({grid * grid, plen});
    for (long py = 0; py < grid; ++py)
        for (long px = 0; px < grid; ++px) {
            double* dst = out->data.data() + (py * grid + px) * plen;
            for (long dy = 0; dy < ps; ++dy)
                for (long dx = 0; dx < ps; ++dx)
                    for (long ch = 0; ch < c; ++ch)
                        *dst++ = image->data[((py * ps + dy) * w + (px * ps + dx)) * c + ch];
        }
    if (detail::grad_enabled({image})) {
        detail::record("patchify", {image}, out, [image, out, ps, grid, w, c, plen] {
            image->ensure_grad();
            for (long py = 0; py < grid; ++py)
                for (long px = 0; px < grid; ++px) {
                    const double* src = out->grad.data() + (py * grid + px) * plen;
                    for (long dy = 0; dy < ps; ++dy)
                        for (long dx = 0; dx < ps; ++dx)
                            for (long ch = 0; ch < c; ++ch)
                                image->grad[((py * ps + dy) * w + (px * ps + dx)) * c + ch] += *src++;
                }
        });
    }
    return out;
}

}  // namespace

void VisionConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
        throw ConfigError("VisionConfig: image_size must be a positive multiple of patch_size");
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
        throw ConfigError("VisionConfig: embed_dim must be divisible by num_heads");
    if (channels <= 0 || num_layers <= 0 || proj_dim <= 0 || mlp_ratio <= 0)
        throw ConfigError("VisionConfig: channels/layers/proj_dim/mlp_ratio must be positive");
}

void TextConfig::validate() const {
    if (vocab_size <= Vocabulary::kNumSpecial)
        throw ConfigError("TextConfig: vocab_size too small");
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
        throw ConfigError("TextConfig: embed_dim must be divisible by num_heads");
    if (num_layers <= 0 || proj_dim <= 0 || mlp_ratio <= 0)
        throw ConfigError("TextConfig: layers/proj_dim/mlp_ratio must be positive");
    if (keep_prefix <= 0 || keep_prefix >= base_max_len || interp_factor < 1)
        throw ConfigError("TextConfig: need 0 < keep_prefix < base_max_len and interp_factor >= 1");
}

TensorPtr extend_position_embeddings(const TensorPtr& table, long keep_prefix, long factor) {
    if (table->ndim() != 2)
        throw ShapeError("extend_position_embeddings: table must be 2-D, got " +
                         shape_str(table->shape));
    const long rows = table->dim(0), d = table->dim(1);
    if (keep_prefix <= 0 || keep_prefix >= rows)
        throw ConfigError("extend_position_embeddings: keep_prefix " + std::to_string(keep_prefix) +
                          " invalid for " + std::to_string(rows) + " rows");
    if (factor < 1) throw ConfigError("extend_position_embeddings: factor must be >= 1");

    const long out_rows = keep_prefix + (rows - keep_prefix) * factor;
    auto out = make_tensor({out_rows, d});
    for (long i = 0; i < keep_prefix; ++i)
        for (long j = 0; j < d; ++j) out->data[i * d + j] = table->data[i * d + j];
    for (long i = keep_prefix; i < out_rows; ++i) {
        const long jdx = i - keep_prefix;
        const long lo = keep_prefix + jdx / factor;
        const long rem = jdx % factor;
        if (rem == 0) {
            for (long j = 0; j < d; ++j) out->data[i * d + j] = table->data[lo * d + j];
            continue;
        }
        const double t = static_cast<double>(rem) / static_cast<double>(factor);
        const long hi = std::min(lo + 1, rows - 1);
        for (long j = 0; j < d; ++j)
            out->data[i * d + j] = (1.0 - t) * table->data[lo * d + j] + t * table->data[hi * d + j];
    }
    return out;
}

void TransformerBlock::init(Rng& rng, long dim, long hidden, long heads) {
    num_heads = heads;
    ln1_g = constant({dim}, 1.0, "");
    ln1_b = constant({dim}, 0.0, "");
    wq = randn_fanin(rng, dim, dim, "");
    bq = constant({dim}, 0.0, "");
    wk = randn_fanin(rng, dim, dim, "");
    bk = constant({dim}, 0.0, "");
    wv = randn_fanin(rng, dim, dim, "");
    bv = constant({dim}, 0.0, "");
    wo = randn_fanin(rng, dim, dim, "");
    bo = constant({dim}, 0.0, "");
    ln2_g = constant({dim}, 1.0, "");
    ln2_b = constant({dim}, 0.0, "");
    fc1_w = randn_fanin(rng, dim, hidden, "");
    fc1_b = constant({hidden}, 0.0, "");
    fc2_w = randn_fanin(rng, hidden, dim, "");
    fc2_b = constant({dim}, 0.0, "");
}

TensorPtr TransformerBlock::forward(const TensorPtr& x) const {
    const long d = x->dim(1);
    const long dh = d / num_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto h = layer_norm(x, ln1_g, ln1_b);
    auto q = add_rowvec(matmul(h, wq), bq);
    auto k = add_rowvec(matmul(h, wk), bk);
    auto v = add_rowvec(matmul(h, wv), bv);

    std::vector<TensorPtr> ctx;
    ctx.reserve(num_heads);
    for (long head = 0; head < num_heads; ++head) {
        auto qs = slice_cols(q, head * dh, (head + 1) * dh);
        auto ks = slice_cols(k, head * dh, (head + 1) * dh);
        auto vs = slice_cols(v, head * dh, (head + 1) * dh);
        auto probs = softmax_rowwise(scale(matmul(qs, transpose(ks)), att_scale));
        ctx.push_back(matmul(probs, vs));
    }
    auto attn = add_rowvec(matmul(concat(ctx, 1), wo), bo);
    auto x1 = add(x, attn);

    auto h2 = layer_norm(x1, ln2_g, ln2_b);
    auto m = add_rowvec(matmul(gelu(add_rowvec(matmul(h2, fc1_w), fc1_b)), fc2_w), fc2_b);
    return add(x1, m);
}

TensorPtr TransformerBlock::forward_self_only(const TensorPtr& x) const {
    auto h = layer_norm(x, ln1_g, ln1_b);
    auto v = add_rowvec(matmul(h, wv), bv);
    auto attn = add_rowvec(matmul(v, wo), bo);
    auto x1 = add(x, attn);

    auto h2 = layer_norm(x1, ln2_g, ln2_b);
    auto m = add_rowvec(matmul(gelu(add_rowvec(matmul(h2, fc1_w), fc1_b)), fc2_w), fc2_b);
    return add(x1, m);
}

void TransformerBlock::collect_params(const std::string& prefix, std::vector<TensorPtr>& out) const {
    const std::pair<const char*, TensorPtr> items[] = {
        {"ln1.g", ln1_g}, {"ln1.b", ln1_b}, {"attn.wq", wq},   {"attn.bq", bq},
        {"attn.wk", wk},  {"attn.bk", bk},  {"attn.wv", wv},   {"attn.bv", bv},
        {"attn.wo", wo},  {"attn.bo", bo},  {"ln2.g", ln2_g},  {"ln2.b", ln2_b},
        {"mlp.fc1_w", fc1_w}, {"mlp.fc1_b", fc1_b}, {"mlp.fc2_w", fc2_w}, {"mlp.fc2_b", fc2_b},
    };
    for (const auto& [suffix, t] : items) {
        t->name = prefix + "." + suffix;
        out.push_back(t);
    }
}

VisionEncoder VisionEncoder::init(const VisionConfig& cfg, Rng& rng) {
    cfg.validate();
    VisionEncoder enc;
    enc.cfg = cfg;
    const long d = cfg.embed_dim;
    enc.patch_proj_w = randn_fanin(rng, cfg.patch_size * cfg.patch_size * cfg.channels, d, "");
    enc.patch_proj_b = constant({d}, 0.0, "");
    enc.cls_token = randn(rng, {1, d}, kEmbedStd, "");
    enc.pos_embed = randn(rng, {1 + cfg.num_patches(), d}, kEmbedStd, "");
    enc.blocks.resize(cfg.num_layers);
    for (auto& b : enc.blocks) b.init(rng, d, cfg.mlp_hidden(), cfg.num_heads);
    enc.final_ln_g = constant({d}, 1.0, "");
    enc.final_ln_b = constant({d}, 0.0, "");
    enc.proj = randn_fanin(rng, d, cfg.proj_dim, "");
    return enc;
}

TensorPtr VisionEncoder::patch_tokens(const TensorPtr& image) const {
    if (image->ndim() != 3 || image->dim(0) != cfg.image_size || image->dim(1) != cfg.image_size ||
        image->dim(2) != cfg.channels)
        throw DataError("encode_image: expected image " + std::to_string(cfg.image_size) + "x" +
                        std::to_string(cfg.image_size) + "x" + std::to_string(cfg.channels) +
                        ", got " + shape_str(image->shape));
    return add_rowvec(matmul(patchify(image, cfg.patch_size), patch_proj_w), patch_proj_b);
}

EncoderOutput VisionEncoder::forward(const TensorPtr& image) const {
    auto tokens = patch_tokens(image);
    auto x = concat({cls_token, tokens}, 0);
    x = add(x, pos_embed);

    EncoderOutput out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (i + 1 == blocks.size()) out.final_block_input = x;
        x = blocks[i].forward(x);
    }
    auto projected = matmul(layer_norm(x, final_ln_g, final_ln_b), proj);
    out.cls_embedding = slice_rows(projected, 0, 1);
    const long w = cfg.grid_side();
    out.token_grid = reshape(slice_rows(projected, 1, 1 + cfg.num_patches()), {w, w, cfg.proj_dim});
    return out;
}

void VisionEncoder::collect_params(std::vector<TensorPtr>& out) const {
    patch_proj_w->name = "vision.patch_proj.w";
    patch_proj_b->name = "vision.patch_proj.b";
    cls_token->name = "vision.cls_token";
    pos_embed->name = "vision.pos_embed";
    out.push_back(patch_proj_w);
    out.push_back(patch_proj_b);
    out.push_back(cls_token);
    out.push_back(pos_embed);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect_params("vision.blocks." + std::to_string(i), out);
    final_ln_g->name = "vision.final_ln.g";
    final_ln_b->name = "vision.final_ln.b";
    proj->name = "vision.proj";
    out.push_back(final_ln_g);
    out.push_back(final_ln_b);
    out.push_back(proj);
}

TextEncoder TextEncoder::init(const TextConfig& cfg, Rng& rng) {
    cfg.validate();
    TextEncoder enc;
    enc.cfg = cfg;
    const long d = cfg.embed_dim;
    enc.token_embed = randn(rng, {cfg.vocab_size, d}, kEmbedStd, "");
    auto base = randn(rng, {cfg.base_max_len, d}, kEmbedStd, "");
    if (cfg.use_extended) {
        // Extended rows become ordinary trainable parameters.
        enc.pos_embed = extend_position_embeddings(base, cfg.keep_prefix, cfg.interp_factor);
        enc.pos_embed->requires_grad = true;
    } else {
        enc.pos_embed = base;
    }
    enc.blocks.resize(cfg.num_layers);
    for (auto& b : enc.blocks) b.init(rng, d, cfg.mlp_hidden(), cfg.num_heads);
    enc.final_ln_g = constant({d}, 1.0, "");
    enc.final_ln_b = constant({d}, 0.0, "");
    enc.proj = randn_fanin(rng, d, cfg.proj_dim, "");
    return enc;
}

EncoderOutput TextEncoder::forward(const TokenSequence& tokens) const {
    const long len = static_cast<long>(tokens.ids.size());
    if (len < 1 || len > cfg.max_len())
        throw DataError("encode_text: sequence length " + std::to_string(len) +
                        " outside [1, " + std::to_string(cfg.max_len()) + "]");
    auto x = embedding(token_embed, tokens.ids);
    x = add(x, slice_rows(pos_embed, 0, len));
    EncoderOutput out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (i + 1 == blocks.size()) out.final_block_input = x;
        x = blocks[i].forward(x);
    }
    auto projected = matmul(layer_norm(x, final_ln_g, final_ln_b), proj);
    out.cls_embedding = slice_rows(projected, 0, 1);
    return out;
}

void TextEncoder::collect_params(std::vector<TensorPtr>& out) const {
    token_embed->name = "text.token_embed";
    pos_embed->name = "text.pos_embed";
    out.push_back(token_embed);
    out.push_back(pos_embed);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect_params("text.blocks." + std::to_string(i), out);
    final_ln_g->name = "text.final_ln.g";
    final_ln_b->name = "text.final_ln.b";
    proj->name = "text.proj";
    out.push_back(final_ln_g);
    out.push_back(final_ln_b);
    out.push_back(proj);
}

ClipModel ClipModel::init(const VisionConfig& vcfg, const TextConfig& tcfg, Vocabulary vocab,
                          uint64_t seed) {
    if (vocab.size() > tcfg.vocab_size)
        throw ConfigError("ClipModel: vocabulary (" + std::to_string(vocab.size()) +
                          " ids) exceeds TextConfig.vocab_size");
    ClipModel m;
    m.vcfg = vcfg;
    m.tcfg = tcfg;
    m.vocab = std::move(vocab);
    Rng rng(seed);
    m.vision = VisionEncoder::init(vcfg, rng);
    m.text = TextEncoder::init(tcfg, rng);
    m.temperature = TemperatureParam::init(0.07);
    return m;
}

std::vector<TensorPtr> ClipModel::parameters() const {
    std::vector<TensorPtr> out;
    vision.collect_params(out);
    text.collect_params(out);
    out.push_back(temperature.log_inv_tau);
    return out;
}

void ClipModel::zero_grads() const {
    for (const auto& p : parameters()) p->zero_grad();
}

EncoderOutput ClipModel::encode_text(const std::string& caption) const {
    return text.forward(tokenize(vocab, caption, tcfg.max_len()));
}

}  // namespace fgclip
