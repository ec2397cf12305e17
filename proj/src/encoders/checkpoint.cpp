#include "mvrisk/encoders/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mvrisk::encoders {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'R', 'C', 'K', 'P', 'T', '\0'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw Incompatible("truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::string get_str(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > (1u << 28)) throw Incompatible("corrupt checkpoint string length");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw Incompatible("truncated checkpoint");
    return s;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& path) const {
    for (const auto& t : tensors)
        if (t.path == path) return &t;
    return nullptr;
}

template <typename T>
Checkpoint make_checkpoint(const ParamStore<T>& store, nlohmann::json meta) {
    Checkpoint c;
    c.meta = std::move(meta);
    c.groups = store.groups();
    for (const auto& e : store.entries()) {
        CheckpointTensor t{e.path, e.group, e.var.shape(), {}};
        t.values.assign(e.var.value().data.begin(), e.var.value().data.end());
        c.tensors.push_back(std::move(t));
    }
    return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw MissingArtifact("cannot write checkpoint " + path.string());
    os.write(kMagic, 8);
    put_u32(os, ckpt.version);
    put_str(os, ckpt.meta.dump());
    put_u32(os, static_cast<std::uint32_t>(ckpt.groups.size()));
    for (const auto& [name, frozen] : ckpt.groups) {
        put_str(os, name);
        const char f = frozen ? 1 : 0;
        os.write(&f, 1);
    }
    put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        put_str(os, t.path);
        put_str(os, t.group);
        put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
        for (float v : t.values) put_u32(os, std::bit_cast<std::uint32_t>(v));
    }
    if (!os) throw MissingArtifact("write failed for checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifact("cannot read checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw Incompatible(path.string() + " is not a checkpoint file");
    Checkpoint c;
    c.version = get_u32(is);
    if (c.version != kCheckpointVersion)
        throw Incompatible("unsupported checkpoint version " + std::to_string(c.version));
    try {
        c.meta = nlohmann::json::parse(get_str(is));
    } catch (const nlohmann::json::exception& e) {
        throw Incompatible(std::string("checkpoint metadata: ") + e.what());
    }
    const std::uint32_t ng = get_u32(is);
    for (std::uint32_t i = 0; i < ng; ++i) {
        auto name = get_str(is);
        char f = 0;
        if (!is.read(&f, 1)) throw Incompatible("truncated checkpoint");
        c.groups[name] = f != 0;
    }
    const std::uint32_t np = get_u32(is);
    for (std::uint32_t i = 0; i < np; ++i) {
        CheckpointTensor t;
        t.path = get_str(is);
        t.group = get_str(is);
        const std::uint32_t rank = get_u32(is);
        if (rank > 8) throw Incompatible("corrupt tensor rank in checkpoint");
        for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(get_u32(is));
        t.values.resize(shape_numel(t.shape));
        for (auto& v : t.values) v = std::bit_cast<float>(get_u32(is));
        c.tensors.push_back(std::move(t));
    }
    return c;
}

template <typename T>
void load_into(const Checkpoint& ckpt, ParamStore<T>& store) {
    for (const auto& [name, frozen] : store.groups()) {
        auto it = ckpt.groups.find(name);
        if (it != ckpt.groups.end() && it->second != frozen)
            throw Incompatible("group '" + name + "' frozen flag differs between checkpoint and model");
    }
    for (const auto& e : store.entries()) {
        const auto* t = ckpt.find(e.path);
        if (!t) throw Incompatible("checkpoint lacks parameter '" + e.path + "'");
        if (t->shape != e.var.shape())
            throw Incompatible("shape mismatch for '" + e.path + "': checkpoint " + shape_str(t->shape) + " vs model " +
                               shape_str(e.var.shape()));
        ag::Var<T> v = e.var;
        v.mutable_value().data.assign(t->values.begin(), t->values.end());
    }
}

template Checkpoint make_checkpoint<float>(const ParamStore<float>&, nlohmann::json);
template Checkpoint make_checkpoint<double>(const ParamStore<double>&, nlohmann::json);
template void load_into<float>(const Checkpoint&, ParamStore<float>&);
template void load_into<double>(const Checkpoint&, ParamStore<double>&);

}  // namespace mvrisk::encoders
