#include "fb/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace fb {

namespace {

constexpr char kMagic[8] = {'F', 'B', 'C', 'K', 'P', 'T', '0', '\n'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointCorruptError("checkpoint: truncated");
    return v;
}
std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw CheckpointCorruptError("checkpoint: truncated");
    return v;
}
std::string get_str(std::istream& is) {
    std::uint64_t n = get_u64(is);
    if (n > (1ull << 32)) throw CheckpointCorruptError("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n)))
        throw CheckpointCorruptError("checkpoint: truncated");
    return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw CheckpointError("checkpoint: cannot open " + tmp + " for writing");
        os.write(kMagic, sizeof kMagic);
        put_u32(os, kVersion);
        put_u64(os, ckpt.step);
        put_str(os, ckpt.config_echo);
        put_str(os, ckpt.rng_state);
        put_u64(os, ckpt.tensors.size());
        for (const auto& [name, t] : ckpt.tensors) {
            put_str(os, name);
            put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
            for (std::int64_t d : t.shape) put_u64(os, static_cast<std::uint64_t>(d));
            os.write(reinterpret_cast<const char*>(t.ptr()),
                     static_cast<std::streamsize>(t.numel() * 8));
        }
        if (!os) throw CheckpointError("checkpoint: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw CheckpointError("checkpoint: rename to " + path + " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw CheckpointCorruptError("checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw CheckpointVersionError("checkpoint: version " + std::to_string(version) +
                                     " unsupported (expected " + std::to_string(kVersion) + ")");
    Checkpoint out;
    out.step = get_u64(is);
    out.config_echo = get_str(is);
    out.rng_state = get_str(is);
    const std::uint64_t count = get_u64(is);
    out.tensors.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = get_str(is);
        const std::uint32_t ndim = get_u32(is);
        if (ndim > 8) throw CheckpointCorruptError("checkpoint: implausible rank");
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::int64_t>(get_u64(is));
        Tensor t(shape);
        if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 8)))
            throw CheckpointCorruptError("checkpoint: truncated tensor " + name);
        out.tensors.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ModelConfig echo
// ---------------------------------------------------------------------------

std::string encode_model_config(const ModelConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "image_size: " << c.image_size << "\n"
       << "patch_size: " << c.patch_size << "\n"
       << "channels: " << c.channels << "\n"
       << "dit_depth: " << c.dit_depth << "\n"
       << "dec_depth: " << c.dec_depth << "\n"
       << "dit_dim: " << c.dit_dim << "\n"
       << "dec_dim: " << c.dec_dim << "\n"
       << "heads: " << c.heads << "\n"
       << "n_class_tokens: " << c.n_class_tokens << "\n"
       << "in_context_start_block: " << c.in_context_start_block << "\n"
       << "irepa_tap_block: " << c.irepa_tap_block << "\n"
       << "num_classes: " << c.num_classes << "\n"
       << "dropout: " << c.dropout << "\n";
    return os.str();
}

ModelConfig decode_model_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        auto pos = line.find(':');
        if (pos == std::string::npos) continue;
        std::string key = line.substr(0, pos);
        std::string val = line.substr(pos + 1);
        while (!val.empty() && val.front() == ' ') val.erase(val.begin());
        kv[key] = val;
    }
    auto geti = [&kv](const char* k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw CheckpointCorruptError(std::string("config echo: missing ") + k);
        return std::stoi(it->second);
    };
    ModelConfig c;
    c.image_size = geti("image_size");
    c.patch_size = geti("patch_size");
    c.channels = geti("channels");
    c.dit_depth = geti("dit_depth");
    c.dec_depth = geti("dec_depth");
    c.dit_dim = geti("dit_dim");
    c.dec_dim = geti("dec_dim");
    c.heads = geti("heads");
    c.n_class_tokens = geti("n_class_tokens");
    c.in_context_start_block = geti("in_context_start_block");
    c.irepa_tap_block = geti("irepa_tap_block");
    c.num_classes = geti("num_classes");
    c.dropout = std::stod(kv.at("dropout"));
    return c;
}

}  // namespace fb
