#include "dsam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dsam/error.hpp"
#include "dsam/hash.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace dsam::harness {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'A', 'M', 'C', 'K', 'P', 'T'};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

Checkpoint snapshot(const RunConfig& cfg, const nn::ParameterStore& store) {
    Checkpoint c{cfg, {}};
    c.tensors.reserve(store.all().size());
    for (const auto& p : store.all()) c.tensors.push_back({p.name, p.var.value(), p.frozen});
    return c;
}

void restore(nn::ParameterStore& store, const Checkpoint& ckpt) {
    for (auto& p : store.all()) {
        const NamedTensor* t = ckpt.find(p.name);
        if (!t) fail(Errc::BadConfig, "checkpoint lacks parameter " + p.name);
        if (t->value.shape() != p.var.shape())
            fail(Errc::BadConfig, "parameter " + p.name + " has shape " + t->value.shape_str() + " in checkpoint, " +
                                      shape_str(p.var.shape()) + " in model");
        p.var.mutable_value() = t->value;
    }
}

std::string serialize(const Checkpoint& ckpt) {
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        table.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"frozen", t.frozen}, {"offset", offset}});
        offset += t.value.numel();
    }
    nlohmann::ordered_json manifest{{"config", to_json(ckpt.config)},
                                    {"config_hash", hex64(config_hash(ckpt.config))},
                                    {"tensors", table}};
    const std::string text = manifest.dump();
    std::string out(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out += text;
    for (const auto& t : ckpt.tensors)
        out.append(reinterpret_cast<const char*>(t.value.data()), t.value.numel() * sizeof(double));
    return out;
}

Checkpoint deserialize(const std::string& bytes) {
    const std::size_t head = sizeof kMagic + sizeof(std::uint64_t);
    if (bytes.size() < head || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        fail(Errc::Io, "not a checkpoint file");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + sizeof kMagic, sizeof len);
    if (bytes.size() < head + len) fail(Errc::Io, "truncated checkpoint manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(head, len));
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::Io, std::string("corrupt checkpoint manifest: ") + e.what());
    }
    Checkpoint c;
    c.config = config_from_json(manifest.at("config"));
    if (manifest.at("config_hash").get<std::string>() != hex64(config_hash(c.config)))
        fail(Errc::BadConfig, "checkpoint config hash does not match its config");

    const char* payload = bytes.data() + head + len;
    const std::size_t available = (bytes.size() - head - len) / sizeof(double);
    for (const auto& entry : manifest.at("tensors")) {
        Tensor::Shape shape = entry.at("shape").get<Tensor::Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        Tensor value(shape, 0.0);
        if (offset + value.numel() > available) fail(Errc::Io, "truncated checkpoint payload");
        std::memcpy(value.data(), payload + offset * sizeof(double), value.numel() * sizeof(double));
        c.tensors.push_back({entry.at("name").get<std::string>(), std::move(value), entry.at("frozen").get<bool>()});
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::Io, "cannot write checkpoint " + path.string());
    const std::string bytes = serialize(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Errc::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::Io, "cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

}  // namespace dsam::harness
