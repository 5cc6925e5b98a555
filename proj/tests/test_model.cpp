#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "crc32.hpp"
#include "model.hpp"

using ad::ModelConfig;
using ad::ModelKind;
using ad::Tensor;

namespace {

ModelConfig tiny_cfg(ModelKind kind, uint64_t seed) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.token_dim = 11;
    cfg.act_dim = 2;
    cfg.embed_dim = 8;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.state_dim = 4;
    cfg.n_heads = 2;
    cfg.ff_dim = 16;
    cfg.max_context = 256;
    cfg.init_seed = seed;
    return cfg;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

std::vector<float> predict_series(ad::SequenceModel& m, uint64_t seed) {
    ad::Rng rng(seed);
    std::vector<float> token(11);
    auto st = m.new_state();
    std::vector<float> out;
    for (int t = 0; t < 10; ++t) {
        for (float& v : token) v = static_cast<float>(rng.normal());
        auto pred = m.predict(st, token);
        out.insert(out.end(), pred.begin(), pred.end());
        m.consume(st, token);
    }
    return out;
}

}  // namespace

TEST_CASE("crc32 reference value") {
    const char* msg = "123456789";
    CHECK(ad::crc32(reinterpret_cast<const unsigned char*>(msg), 9) == 0xCBF43926u);
}

TEST_CASE("crc32 streaming equals one-shot") {
    std::vector<unsigned char> data(1024);
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<unsigned char>(i * 37 + 11);
    ad::Crc32 s;
    s.update(data.data(), 100);
    s.update(data.data() + 100, data.size() - 100);
    CHECK(s.value() == ad::crc32(data.data(), data.size()));
}

TEST_CASE("config json round trip") {
    for (ModelKind kind : {ModelKind::ssm, ModelKind::transformer}) {
        ModelConfig cfg = tiny_cfg(kind, 7);
        std::string js = ad::model_config_to_json(cfg);
        ModelConfig back = ad::model_config_from_json(js);
        CHECK(back.kind == cfg.kind);
        CHECK(back.token_dim == cfg.token_dim);
        CHECK(back.d_model == cfg.d_model);
        CHECK(back.n_layers == cfg.n_layers);
        CHECK(back.state_dim == cfg.state_dim);
        CHECK(back.n_heads == cfg.n_heads);
        CHECK(back.ff_dim == cfg.ff_dim);
        CHECK(back.init_seed == cfg.init_seed);
    }
    CHECK_THROWS_AS((void)ad::model_config_from_json("{\"kind\":\"ssm\"}"), ad::ConfigError);
    CHECK_THROWS_AS((void)ad::model_config_from_json("not json"), ad::ConfigError);
}

TEST_CASE("checkpoint round trip preserves parameters, step counter and predictions") {
    for (ModelKind kind : {ModelKind::ssm, ModelKind::transformer}) {
        ModelConfig cfg = tiny_cfg(kind, 141);
        ad::SequenceModel model(cfg);
        // make the weights non-trivial
        ad::Rng rng(142);
        for (auto& [name, t] : model.named_params())
            for (float& v : Tensor(t).data()) v = static_cast<float>(rng.normal() * 0.1);
        model.train_steps = 1234;

        auto path = temp_file("ad_ckpt_roundtrip.bin");
        ad::save_checkpoint(model, path.string());
        ad::SequenceModel loaded = ad::load_checkpoint(path.string());

        CHECK(loaded.kind() == kind);
        CHECK(loaded.train_steps == 1234);
        auto p0 = model.named_params(), p1 = loaded.named_params();
        REQUIRE(p0.size() == p1.size());
        for (size_t i = 0; i < p0.size(); ++i) {
            CHECK(p0[i].first == p1[i].first);
            auto d0 = p0[i].second.data(), d1 = p1[i].second.data();
            REQUIRE(d0.size() == d1.size());
            for (size_t j = 0; j < d0.size(); ++j) CHECK(d0[j] == d1[j]);
        }
        CHECK(predict_series(model, 143) == predict_series(loaded, 143));
        std::filesystem::remove(path);
    }
}

TEST_CASE("checkpoint corruption is detected") {
    ModelConfig cfg = tiny_cfg(ModelKind::ssm, 151);
    ad::SequenceModel model(cfg);
    auto path = temp_file("ad_ckpt_corrupt.bin");
    ad::save_checkpoint(model, path.string());

    auto flip_byte_at = [&](std::streamoff pos) {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(pos);
        char c = 0;
        f.read(&c, 1);
        c = static_cast<char>(c ^ 0x5A);
        f.seekp(pos);
        f.write(&c, 1);
    };

    SUBCASE("flipped payload byte") {
        auto size = std::filesystem::file_size(path);
        flip_byte_at(static_cast<std::streamoff>(size / 2));
        CHECK_THROWS_AS((void)ad::load_checkpoint(path.string()), ad::DataError);
    }
    SUBCASE("flipped magic byte") {
        flip_byte_at(0);
        CHECK_THROWS_AS((void)ad::load_checkpoint(path.string()), ad::DataError);
    }
    SUBCASE("truncated file") {
        auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size - 16);
        CHECK_THROWS_AS((void)ad::load_checkpoint(path.string()), ad::DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS((void)ad::load_checkpoint((path.string() + ".nope")), ad::DataError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("facade dispatches to the right backbone") {
    ad::SequenceModel ssm(tiny_cfg(ModelKind::ssm, 161));
    ad::SequenceModel tf(tiny_cfg(ModelKind::transformer, 161));
    CHECK(ssm.kind() == ModelKind::ssm);
    CHECK(tf.kind() == ModelKind::transformer);
    CHECK(ssm.param_count() > 0);
    CHECK(tf.param_count() > 0);
    CHECK(ad::parse_model_kind("ssm") == ModelKind::ssm);
    CHECK(ad::parse_model_kind("transformer") == ModelKind::transformer);
    CHECK_THROWS_AS((void)ad::parse_model_kind("rnn"), ad::ConfigError);
}
