#include "priorfill/trainer/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace priorfill {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

namespace {

size_t elem_size(DType dt) { return dt == DType::f32 ? sizeof(float) : sizeof(double); }

const char* raw_bytes(const Tensor& t) {
    return t.dtype() == DType::f32 ? reinterpret_cast<const char*>(t.data<float>())
                                   : reinterpret_cast<const char*>(t.data<double>());
}

char* raw_bytes(Tensor& t) {
    return t.dtype() == DType::f32 ? reinterpret_cast<char*>(t.data<float>())
                                   : reinterpret_cast<char*>(t.data<double>());
}

uint32_t crc_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    size_t off = 0;
    while (off < bytes.size()) {
        const uInt chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - off, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
        off += chunk;
    }
    return static_cast<uint32_t>(crc);
}

void write_atomically(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw CheckpointError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& nt : tensors)
        if (nt.name == name) return nt.tensor;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const std::string& dir, const Checkpoint& ck) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw CheckpointError("cannot create " + dir + ": " + ec.message());

    std::string blob;
    json index = json::array();
    std::set<std::string> seen;
    for (const auto& nt : ck.tensors) {
        if (!seen.insert(nt.name).second) throw CheckpointError("duplicate tensor name '" + nt.name + "'");
        const Tensor& t = nt.tensor;
        const size_t nbytes = static_cast<size_t>(t.numel()) * elem_size(t.dtype());
        index.push_back({{"name", nt.name},
                         {"dtype", dtype_name(t.dtype())},
                         {"shape", t.shape()},
                         {"offset", blob.size()},
                         {"nbytes", nbytes}});
        blob.append(raw_bytes(t), nbytes);
    }
    json manifest = {{"version", ck.version},     {"model_kind", ck.model_kind}, {"config", ck.config},
                     {"step", ck.step},           {"rng_state", ck.rng_state},   {"extra", ck.extra},
                     {"blob_bytes", blob.size()}, {"blob_crc32", crc_of(blob)},  {"tensors", index}};
    const fs::path root(dir);
    write_atomically(root / "blob.bin", blob);
    write_atomically(root / "manifest.json", manifest.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
    const fs::path root(dir);
    json m;
    try {
        m = json::parse(read_file(root / "manifest.json"));
    } catch (const json::exception& e) {
        throw CheckpointError("malformed manifest in " + dir + ": " + e.what());
    }
    Checkpoint ck;
    try {
        ck.version = m.at("version").get<int>();
        if (ck.version != kCheckpointVersion)
            throw CheckpointError("checkpoint version " + std::to_string(ck.version) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
        ck.model_kind = m.at("model_kind").get<std::string>();
        ck.config = m.at("config");
        ck.step = m.at("step").get<int64_t>();
        ck.rng_state = m.at("rng_state");
        ck.extra = m.at("extra");

        const std::string blob = read_file(root / "blob.bin");
        if (blob.size() != m.at("blob_bytes").get<size_t>())
            throw CheckpointError("blob in " + dir + " has " + std::to_string(blob.size()) + " bytes, manifest says " +
                                  std::to_string(m.at("blob_bytes").get<size_t>()));
        if (crc_of(blob) != m.at("blob_crc32").get<uint32_t>()) throw CheckpointError("blob checksum mismatch in " + dir);

        size_t expected_offset = 0;
        std::set<std::string> seen;
        for (const auto& e : m.at("tensors")) {
            const std::string name = e.at("name").get<std::string>();
            if (!seen.insert(name).second) throw CheckpointError("duplicate tensor '" + name + "' in index");
            const DType dt = dtype_from_name(e.at("dtype").get<std::string>());
            const Shape shape = e.at("shape").get<Shape>();
            for (int64_t s : shape)
                if (s < 0) throw CheckpointError("negative extent for '" + name + "'");
            const size_t offset = e.at("offset").get<size_t>(), nbytes = e.at("nbytes").get<size_t>();
            if (offset != expected_offset || nbytes != static_cast<size_t>(shape_numel(shape)) * elem_size(dt) ||
                offset + nbytes > blob.size())
                throw CheckpointError("index entry '" + name + "' disagrees with the blob layout");
            Tensor t = Tensor::empty(shape, dt);
            std::copy_n(blob.data() + offset, nbytes, raw_bytes(t));
            ck.tensors.push_back({name, t});
            expected_offset = offset + nbytes;
        }
        if (expected_offset != blob.size()) throw CheckpointError("blob has trailing bytes not covered by the index");
    } catch (const json::exception& e) {
        throw CheckpointError("malformed manifest in " + dir + ": " + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("malformed manifest in ") + dir + ": " + e.what());
    }
    return ck;
}

void append_tensors(std::vector<NamedTensor>& dst, const std::string& prefix, const std::vector<NamedTensor>& src) {
    for (const auto& nt : src) dst.push_back({prefix + nt.name, nt.tensor.detach().clone()});
}

void restore_tensors(const Checkpoint& ck, const std::string& prefix, const std::vector<NamedTensor>& targets) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& nt : ck.tensors) by_name[nt.name] = &nt.tensor;
    std::vector<std::pair<Tensor, const Tensor*>> plan;
    for (const auto& nt : targets) {
        auto it = by_name.find(prefix + nt.name);
        if (it == by_name.end()) throw CheckpointError("checkpoint is missing '" + prefix + nt.name + "'");
        const Tensor& src = *it->second;
        if (src.shape() != nt.tensor.shape() || src.dtype() != nt.tensor.dtype())
            throw CheckpointError("checkpoint tensor '" + prefix + nt.name + "' is " + shape_str(src.shape()) + " " +
                                  dtype_name(src.dtype()) + ", model expects " + shape_str(nt.tensor.shape()) + " " +
                                  dtype_name(nt.tensor.dtype()));
        plan.emplace_back(nt.tensor, &src);
    }
    for (auto& [dst, src] : plan) {
        Tensor d = dst;
        std::copy_n(raw_bytes(*src), static_cast<size_t>(src->numel()) * elem_size(src->dtype()), raw_bytes(d));
    }
}

}  // namespace priorfill
