#include "dataset.hpp"

#include <cstring>
#include <fstream>

#include "crc32.hpp"

namespace ad {

namespace {

constexpr char kTrajMagic[8] = {'A', 'D', 'T', 'R', 'A', 'J', '0', '1'};
constexpr uint32_t kTrajVersion = 1;

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

uint32_t get_u32(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

void put_f32(std::vector<unsigned char>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(const unsigned char* p) {
    uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

double TrajectoryData::episode_return(int64_t e) const {
    double sum = 0.0;
    for (int64_t t = 0; t < horizon; ++t) sum += rewards[e * horizon + t];
    return sum;
}

void TrajectoryData::validate() const {
    if (obs_dim <= 0 || act_dim <= 0 || horizon <= 0 || episodes < 0)
        throw DataError("trajectory dims must be positive");
    if (static_cast<int64_t>(obs.size()) != steps() * obs_dim ||
        static_cast<int64_t>(actions.size()) != steps() * act_dim ||
        static_cast<int64_t>(rewards.size()) != steps())
        throw DataError("trajectory buffer sizes do not match dims");
}

void write_trajectory(const TrajectoryData& data, const std::string& path) {
    data.validate();
    std::vector<unsigned char> body;
    body.reserve(static_cast<size_t>(data.steps()) * (data.obs_dim + data.act_dim + 1) * 4);
    for (int64_t e = 0; e < data.episodes; ++e)
        for (int64_t t = 0; t < data.horizon; ++t) {
            const float* o = data.obs_row(e, t);
            for (int64_t d = 0; d < data.obs_dim; ++d) put_f32(body, o[d]);
            const float* a = data.act_row(e, t);
            for (int64_t d = 0; d < data.act_dim; ++d) put_f32(body, a[d]);
            put_f32(body, data.reward_at(e, t));
        }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(kTrajMagic, 8);
    std::vector<unsigned char> head;
    put_u32(head, kTrajVersion);
    put_u32(head, static_cast<uint32_t>(data.obs_dim));
    put_u32(head, static_cast<uint32_t>(data.act_dim));
    put_u32(head, static_cast<uint32_t>(data.horizon));
    put_u32(head, static_cast<uint32_t>(data.episodes));
    f.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
    f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    std::vector<unsigned char> foot;
    put_u32(foot, crc32(body.data(), body.size()));
    f.write(reinterpret_cast<const char*>(foot.data()), 4);
    if (!f) throw DataError("write failed: " + path);
}

TrajectoryData read_trajectory(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("cannot open trajectory file: " + path);
    auto size = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<unsigned char> bytes(size);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!f) throw DataError("read failed: " + path);

    if (size < 8 + 20 + 4 || std::memcmp(bytes.data(), kTrajMagic, 8) != 0)
        throw DataError("bad magic: not a trajectory file: " + path);
    uint32_t version = get_u32(bytes.data() + 8);
    if (version != kTrajVersion)
        throw DataError("unsupported trajectory version " + std::to_string(version));

    TrajectoryData data;
    data.obs_dim = get_u32(bytes.data() + 12);
    data.act_dim = get_u32(bytes.data() + 16);
    data.horizon = get_u32(bytes.data() + 20);
    data.episodes = get_u32(bytes.data() + 24);
    if (data.obs_dim <= 0 || data.act_dim <= 0 || data.horizon <= 0)
        throw DataError("bad trajectory dims in header: " + path);

    size_t body_size =
        static_cast<size_t>(data.steps()) * (data.obs_dim + data.act_dim + 1) * 4;
    if (size != 8 + 20 + body_size + 4)
        throw DataError("trajectory file size mismatch (truncated?): " + path);
    const unsigned char* body = bytes.data() + 28;
    uint32_t stored = get_u32(body + body_size);
    if (crc32(body, body_size) != stored) throw DataError("crc mismatch: " + path);

    data.obs.resize(data.steps() * data.obs_dim);
    data.actions.resize(data.steps() * data.act_dim);
    data.rewards.resize(data.steps());
    const unsigned char* p = body;
    for (int64_t s = 0; s < data.steps(); ++s) {
        for (int64_t d = 0; d < data.obs_dim; ++d, p += 4) data.obs[s * data.obs_dim + d] = get_f32(p);
        for (int64_t d = 0; d < data.act_dim; ++d, p += 4)
            data.actions[s * data.act_dim + d] = get_f32(p);
        data.rewards[s] = get_f32(p);
        p += 4;
    }
    return data;
}

TrajectoryData downsample(const TrajectoryData& data, int64_t k) {
    if (k < 1) throw ConfigError("downsampling rate must be >= 1");
    if (k > data.episodes)
        throw DataError("downsampling rate " + std::to_string(k) + " exceeds episode count " +
                        std::to_string(data.episodes));
    TrajectoryData out;
    out.obs_dim = data.obs_dim;
    out.act_dim = data.act_dim;
    out.horizon = data.horizon;
    out.downsample_k = k;
    for (int64_t e = 0; e < data.episodes; e += k) {
        out.obs.insert(out.obs.end(), data.obs_row(e, 0),
                       data.obs_row(e, 0) + data.horizon * data.obs_dim);
        out.actions.insert(out.actions.end(), data.act_row(e, 0),
                           data.act_row(e, 0) + data.horizon * data.act_dim);
        out.rewards.insert(out.rewards.end(), data.rewards.begin() + e * data.horizon,
                           data.rewards.begin() + (e + 1) * data.horizon);
        ++out.episodes;
    }
    return out;
}

void build_token(std::span<float> out, std::span<const float> obs, std::span<const float> action,
                 float reward, std::span<const float> next_obs) {
    size_t i = 0;
    for (float v : obs) out[i++] = v;
    for (float v : action) out[i++] = v;
    out[i++] = reward;
    for (float v : next_obs) out[i++] = v;
}

TokenSequence pack_tokens(const TrajectoryData& data) {
    data.validate();
    TokenSequence seq;
    seq.obs_dim = data.obs_dim;
    seq.act_dim = data.act_dim;
    seq.horizon = data.horizon;
    seq.length = data.steps();
    int64_t width = seq.token_dim();
    seq.tokens.resize(seq.length * width);
    seq.targets.resize(seq.length * data.act_dim);
    for (int64_t e = 0; e < data.episodes; ++e) {
        seq.episode_starts.push_back(e * data.horizon);
        for (int64_t t = 0; t < data.horizon; ++t) {
            int64_t pos = e * data.horizon + t;
            // frozen tail: the terminal step repeats its own observation
            const float* next = t + 1 < data.horizon ? data.obs_row(e, t + 1) : data.obs_row(e, t);
            build_token({seq.tokens.data() + pos * width, static_cast<size_t>(width)},
                        {data.obs_row(e, t), static_cast<size_t>(data.obs_dim)},
                        {data.act_row(e, t), static_cast<size_t>(data.act_dim)},
                        data.reward_at(e, t), {next, static_cast<size_t>(data.obs_dim)});
            std::memcpy(seq.targets.data() + pos * data.act_dim, data.act_row(e, t),
                        data.act_dim * sizeof(float));
        }
    }
    return seq;
}

TrajectoryData unpack_tokens(const TokenSequence& seq) {
    if (seq.horizon <= 0 || seq.length % seq.horizon != 0)
        throw DataError("token sequence is not episode-aligned");
    TrajectoryData data;
    data.obs_dim = seq.obs_dim;
    data.act_dim = seq.act_dim;
    data.horizon = seq.horizon;
    data.episodes = seq.length / seq.horizon;
    data.obs.resize(seq.length * seq.obs_dim);
    data.actions.resize(seq.length * seq.act_dim);
    data.rewards.resize(seq.length);
    int64_t width = seq.token_dim();
    for (int64_t s = 0; s < seq.length; ++s) {
        const float* tok = seq.tokens.data() + s * width;
        std::memcpy(data.obs.data() + s * seq.obs_dim, tok, seq.obs_dim * sizeof(float));
        std::memcpy(data.actions.data() + s * seq.act_dim, tok + seq.obs_dim,
                    seq.act_dim * sizeof(float));
        data.rewards[s] = tok[seq.obs_dim + seq.act_dim];
    }
    return data;
}

int64_t sample_window_start(int64_t length, int64_t window, Rng& rng) {
    if (window < 1 || window > length)
        throw ConfigError("window length " + std::to_string(window) +
                          " outside [1, " + std::to_string(length) + "]");
    return static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(length - window + 1)));
}

TokenSequence slice_window(const TokenSequence& seq, int64_t start, int64_t window) {
    if (start < 0 || window < 1 || start + window > seq.length)
        throw ConfigError("window [" + std::to_string(start) + ", " +
                          std::to_string(start + window) + ") outside sequence of length " +
                          std::to_string(seq.length));
    TokenSequence out;
    out.obs_dim = seq.obs_dim;
    out.act_dim = seq.act_dim;
    out.horizon = seq.horizon;
    out.length = window;
    int64_t width = seq.token_dim();
    out.tokens.assign(seq.tokens.begin() + start * width,
                      seq.tokens.begin() + (start + window) * width);
    out.targets.assign(seq.targets.begin() + start * seq.act_dim,
                       seq.targets.begin() + (start + window) * seq.act_dim);
    for (int64_t s : seq.episode_starts)
        if (s >= start && s < start + window) out.episode_starts.push_back(s - start);
    return out;
}

void augment_noise(TokenSequence& seq, float sigma, Rng& rng) {
    if (sigma < 0) throw ConfigError("noise sigma must be >= 0");
    if (sigma == 0.0f) return;
    for (float& v : seq.tokens) v += static_cast<float>(rng.normal(0.0, sigma));
}

void mask_to_query(std::span<float> token, int64_t obs_dim) {
    for (size_t i = static_cast<size_t>(obs_dim); i < token.size(); ++i) token[i] = 0.0f;
}

std::vector<float> make_queries(const TokenSequence& seq) {
    std::vector<float> queries = seq.tokens;
    int64_t width = seq.token_dim();
    for (int64_t t = 0; t < seq.length; ++t)
        mask_to_query({queries.data() + t * width, static_cast<size_t>(width)}, seq.obs_dim);
    return queries;
}

}  // namespace ad
