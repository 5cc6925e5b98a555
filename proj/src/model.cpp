#include "model.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "crc32.hpp"

namespace ad {

using nlohmann::json;

ModelKind parse_model_kind(const std::string& name) {
    if (name == "ssm") return ModelKind::ssm;
    if (name == "transformer") return ModelKind::transformer;
    throw ConfigError("unknown model kind '" + name + "' (expected ssm or transformer)");
}

std::string model_kind_name(ModelKind k) {
    return k == ModelKind::ssm ? "ssm" : "transformer";
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["kind"] = model_kind_name(cfg.kind);
    j["token_dim"] = cfg.token_dim;
    j["act_dim"] = cfg.act_dim;
    j["embed_dim"] = cfg.embed_dim;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["state_dim"] = cfg.state_dim;
    j["conv_width"] = cfg.conv_width;
    j["expand"] = cfg.expand;
    j["dt_rank"] = cfg.dt_rank;
    j["n_heads"] = cfg.n_heads;
    j["ff_dim"] = cfg.ff_dim;
    j["max_context"] = cfg.max_context;
    j["init_seed"] = cfg.init_seed;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: invalid JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.kind = parse_model_kind(j.at("kind").get<std::string>());
        cfg.token_dim = j.at("token_dim").get<int64_t>();
        cfg.act_dim = j.at("act_dim").get<int64_t>();
        cfg.embed_dim = j.at("embed_dim").get<int64_t>();
        cfg.d_model = j.at("d_model").get<int64_t>();
        cfg.n_layers = j.at("n_layers").get<int64_t>();
        cfg.state_dim = j.at("state_dim").get<int64_t>();
        cfg.conv_width = j.at("conv_width").get<int64_t>();
        cfg.expand = j.at("expand").get<int64_t>();
        cfg.dt_rank = j.at("dt_rank").get<int64_t>();
        cfg.n_heads = j.at("n_heads").get<int64_t>();
        cfg.ff_dim = j.at("ff_dim").get<int64_t>();
        cfg.max_context = j.at("max_context").get<int64_t>();
        cfg.init_seed = j.at("init_seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return cfg;
}

SequenceModel::SequenceModel(const ModelConfig& cfg)
    : cfg_(cfg),
      impl_(cfg.kind == ModelKind::ssm
                ? std::variant<SsmModel, TransformerModel>(std::in_place_index<0>, cfg.ssm())
                : std::variant<SsmModel, TransformerModel>(std::in_place_index<1>,
                                                           cfg.transformer())) {}

Tensor SequenceModel::forward(const Tensor& tokens, const Tensor& queries) const {
    return std::visit([&](const auto& m) { return m.forward(tokens, queries); }, impl_);
}

SequenceModel::State SequenceModel::new_state() const {
    State s;
    std::visit([&](const auto& m) { s.v = m.new_state(); }, impl_);
    return s;
}

void SequenceModel::consume(State& st, std::span<const float> token) const {
    if (cfg_.kind == ModelKind::ssm)
        std::get<0>(impl_).consume(std::get<0>(st.v), token);
    else
        std::get<1>(impl_).consume(std::get<1>(st.v), token);
}

std::vector<float> SequenceModel::predict(const State& st, std::span<const float> query) const {
    if (cfg_.kind == ModelKind::ssm) return std::get<0>(impl_).predict(std::get<0>(st.v), query);
    return std::get<1>(impl_).predict(std::get<1>(st.v), query);
}

std::vector<std::pair<std::string, Tensor>> SequenceModel::named_params() const {
    return std::visit([](const auto& m) { return m.named_params(); }, impl_);
}

int64_t SequenceModel::param_count() const {
    return std::visit([](const auto& m) { return m.param_count(); }, impl_);
}

namespace {

constexpr char kCkptMagic[8] = {'A', 'D', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kCkptVersion = 1;

struct CrcWriter {
    std::ofstream out;
    Crc32 crc;
    bool past_magic = false;

    explicit CrcWriter(const std::string& path) : out(path, std::ios::binary) {}

    void write(const void* data, size_t len) {
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        if (past_magic) crc.update(data, len);
    }
    void u32(uint32_t v) { write(&v, 4); }
    void u64(uint64_t v) { write(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        write(s.data(), s.size());
    }
};

struct CrcReader {
    std::ifstream in;
    explicit CrcReader(const std::string& path) : in(path, std::ios::binary) {}

    void read(void* data, size_t len, const char* what) {
        in.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        if (static_cast<size_t>(in.gcount()) != len)
            throw DataError(std::string("checkpoint: truncated while reading ") + what);
    }
    uint32_t u32(const char* what) {
        uint32_t v;
        read(&v, 4, what);
        return v;
    }
    uint64_t u64(const char* what) {
        uint64_t v;
        read(&v, 8, what);
        return v;
    }
    std::string str(const char* what) {
        uint32_t n = u32(what);
        if (n > (1u << 24)) throw DataError(std::string("checkpoint: oversized string for ") + what);
        std::string s(n, '\0');
        read(s.data(), n, what);
        return s;
    }
};

}  // namespace

void save_checkpoint(const SequenceModel& model, const std::string& path) {
    CrcWriter w(path);
    if (!w.out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    w.write(kCkptMagic, 8);
    w.past_magic = true;
    w.u32(kCkptVersion);
    w.str(model_config_to_json(model.config()));
    w.u64(static_cast<uint64_t>(model.train_steps));

    auto params = model.named_params();
    w.u32(static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        w.str(name);
        w.u32(static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) w.u64(static_cast<uint64_t>(d));
        w.write(t.data().data(), t.data().size() * sizeof(float));
    }
    uint32_t crc = w.crc.value();
    w.write(&crc, 4);
    w.out.close();
    if (!w.out) throw DataError("checkpoint: write to '" + path + "' failed");
}

SequenceModel load_checkpoint(const std::string& path) {
    // read whole file once so the CRC can be verified before parsing
    std::ifstream probe(path, std::ios::binary | std::ios::ate);
    if (!probe) throw DataError("checkpoint: cannot open '" + path + "'");
    auto size = static_cast<size_t>(probe.tellg());
    if (size < 16) throw DataError("checkpoint: file too small");
    probe.seekg(0);
    std::vector<char> bytes(size);
    probe.read(bytes.data(), static_cast<std::streamsize>(size));
    if (std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
        throw DataError("checkpoint: bad magic (not a checkpoint file)");
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + size - 4, 4);
    if (crc32(bytes.data() + 8, size - 12) != stored)
        throw DataError("checkpoint: CRC mismatch, file is corrupt");

    CrcReader r(path);
    char magic[8];
    r.read(magic, 8, "magic");
    uint32_t version = r.u32("version");
    if (version != kCkptVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    ModelConfig cfg = model_config_from_json(r.str("config"));
    SequenceModel model(cfg);
    model.train_steps = static_cast<int64_t>(r.u64("step counter"));

    auto params = model.named_params();
    uint32_t n = r.u32("parameter count");
    if (n != params.size())
        throw DataError("checkpoint: has " + std::to_string(n) + " parameters, model expects " +
                        std::to_string(params.size()));
    for (auto& [name, t] : params) {
        std::string got = r.str("parameter name");
        if (got != name)
            throw DataError("checkpoint: parameter '" + got + "' where '" + name + "' expected");
        uint32_t rank = r.u32("parameter rank");
        Shape shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(r.u64("dimension"));
        if (shape != t.shape())
            throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(t.shape()));
        r.read(t.data().data(), t.data().size() * sizeof(float), name.c_str());
    }
    return model;
}

uint32_t file_crc32(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    Crc32 crc;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        crc.update(buf, static_cast<size_t>(in.gcount()));
    }
    return crc.value();
}

}  // namespace ad
