#include "fgclip/checkpoint.hpp"

#include <cstring>

#include "fgclip/error.hpp"
#include "fgclip/io_util.hpp"
#include "fgclip/rng.hpp"

namespace fgclip {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'C', 'K'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(out, bits);
}

void put_string(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}

struct Reader {
    const std::string& bytes;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > bytes.size()) throw DataError("checkpoint: unexpected end of file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str() {
        const uint64_t n = u64();
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_tensor(std::string& out, const Checkpoint::NamedTensor& t) {
    put_string(out, t.name);
    put_u64(out, t.shape.size());
    for (long s : t.shape) put_u64(out, static_cast<uint64_t>(s));
    put_u64(out, t.values.size());
    for (float v : t.values) put_f32(out, v);
}

Checkpoint::NamedTensor read_tensor(Reader& r) {
    Checkpoint::NamedTensor t;
    t.name = r.str();
    const uint64_t ndim = r.u64();
    for (uint64_t i = 0; i < ndim; ++i) t.shape.push_back(static_cast<long>(r.u64()));
    const uint64_t n = r.u64();
    t.values.reserve(n);
    for (uint64_t i = 0; i < n; ++i) t.values.push_back(r.f32());
    return t;
}

}  // namespace

Checkpoint::NamedTensor Checkpoint::from_tensor(const TensorPtr& t) {
    NamedTensor nt;
    nt.name = t->name;
    nt.shape = t->shape;
    nt.values.reserve(t->data.size());
    for (double v : t->data) nt.values.push_back(static_cast<float>(v));
    return nt;
}

const Checkpoint::NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

std::string Checkpoint::serialize() const {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_string(out, config_json);
    put_u64(out, tensors.size());
    for (const auto& t : tensors) put_tensor(out, t);
    put_u64(out, static_cast<uint64_t>(opt_step));
    put_u64(out, opt_m.size());
    for (const auto& t : opt_m) put_tensor(out, t);
    put_u64(out, opt_v.size());
    for (const auto& t : opt_v) put_tensor(out, t);
    put_u64(out, fnv1a64(out.data(), out.size()));
    return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic");
    // Checksum first: everything but the trailing 8 bytes.
    const size_t body = bytes.size() - 8;
    uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
    if (fnv1a64(bytes.data(), body) != stored)
        throw DataError("checkpoint: checksum mismatch (corrupted or truncated file)");

    Reader r{bytes, 4};
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError("checkpoint: unknown version " + std::to_string(version));
    Checkpoint ck;
    ck.config_json = r.str();
    const uint64_t nt = r.u64();
    for (uint64_t i = 0; i < nt; ++i) ck.tensors.push_back(read_tensor(r));
    ck.opt_step = static_cast<long>(r.u64());
    const uint64_t nm = r.u64();
    for (uint64_t i = 0; i < nm; ++i) ck.opt_m.push_back(read_tensor(r));
    const uint64_t nv = r.u64();
    for (uint64_t i = 0; i < nv; ++i) ck.opt_v.push_back(read_tensor(r));
    return ck;
}

void Checkpoint::save(const std::string& path) const { atomic_write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace fgclip
