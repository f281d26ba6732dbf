#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "defemb/error.hpp"
#include "defemb/model.hpp"

using namespace defemb;

namespace {

ModelConfig tiny_encoder() {
    ModelConfig c;
    c.vocab_size = 11;
    c.h_e = 8;
    c.h_s = 8;
    c.layers = 2;
    c.heads = 2;
    c.ffn = 12;
    c.max_seq = 8;
    return c;
}

ModelConfig tiny_encdec() {
    ModelConfig c = tiny_encoder();
    c.mode = ModelMode::encoder_decoder;
    c.h_e = 6;  // exercises the projection pair
    c.tie_lm_head = false;
    c.layers = 1;
    return c;
}

template <class S>
std::vector<std::string> tensor_names(const Params<S>& p) {
    std::vector<std::string> names;
    visit_tensors(p, [&](const std::string& n, const Mat<S>&) { names.push_back(n); });
    return names;
}

template <class S>
bool params_identical(const Params<S>& a, const Params<S>& b) {
    bool same = true;
    std::vector<const Mat<S>*> ta, tb;
    visit_tensors(a, [&](const std::string&, const Mat<S>& t) { ta.push_back(&t); });
    visit_tensors(b, [&](const std::string&, const Mat<S>& t) { tb.push_back(&t); });
    if (ta.size() != tb.size()) return false;
    for (size_t i = 0; i < ta.size(); ++i) same = same && (ta[i]->a == tb[i]->a);
    return same;
}

}  // namespace

TEST_CASE("config validation rejects impossible shapes") {
    ModelConfig c = tiny_encoder();
    c.vocab_size = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = tiny_encoder();
    c.heads = 3;  // does not divide h_s = 8
    CHECK_THROWS_AS(c.validate(), Error);
    c = tiny_encoder();
    c.layers = -1;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_NOTHROW(tiny_encoder().validate());
}

TEST_CASE("init is deterministic in (config, seed) and follows the suffix rules") {
    const auto a = init_params<float>(tiny_encoder(), 5);
    const auto b = init_params<float>(tiny_encoder(), 5);
    const auto c = init_params<float>(tiny_encoder(), 6);
    CHECK(params_identical(a, b));
    CHECK_FALSE(params_identical(a, c));

    visit_tensors(a, [&](const std::string& name, const Mat<float>& t) {
        const bool gain = name.size() >= 5 && name.substr(name.size() - 5) == ".gain";
        const bool bias = name.size() >= 5 && name.substr(name.size() - 5) == ".bias";
        if (gain) {
            for (float x : t.a) CHECK(x == 1.0f);
        } else if (bias) {
            for (float x : t.a) CHECK(x == 0.0f);
        } else {
            // N(0, 0.02²) draws: all small, not all zero
            float mx = 0.0f;
            for (float x : t.a) mx = std::max(mx, std::abs(x));
            CHECK(mx > 0.0f);
            CHECK(mx < 0.2f);
        }
    });
}

TEST_CASE("visit order is the frozen tensor table") {
    const auto p = init_params<float>(tiny_encdec(), 0);
    ModelConfig c = tiny_encdec();
    c.mimic_head = true;
    const auto pm = init_params<float>(c, 0);

    const std::vector<std::string> attn = {".wq.weight", ".wq.bias", ".wk.weight", ".wk.bias",
                                           ".wv.weight", ".wv.bias", ".wo.weight", ".wo.bias"};
    std::vector<std::string> want = {"tok_emb.weight", "pos_enc.weight", "pos_dec.weight",
                                     "in_proj.weight", "out_proj.weight",
                                     "enc.0.ln1.gain", "enc.0.ln1.bias"};
    for (const auto& s : attn) want.push_back("enc.0.attn" + s);
    for (const auto& s : {".ln2.gain", ".ln2.bias", ".ffn.w1.weight", ".ffn.w1.bias",
                          ".ffn.w2.weight", ".ffn.w2.bias"})
        want.push_back("enc.0" + std::string(s));
    want.push_back("enc_lnf.gain");
    want.push_back("enc_lnf.bias");
    want.push_back("dec.0.ln1.gain");
    want.push_back("dec.0.ln1.bias");
    for (const auto& s : attn) want.push_back("dec.0.attn" + s);
    want.push_back("dec.0.lnx.gain");
    want.push_back("dec.0.lnx.bias");
    for (const auto& s : attn) want.push_back("dec.0.cross" + s);
    for (const auto& s : {".ln2.gain", ".ln2.bias", ".ffn.w1.weight", ".ffn.w1.bias",
                          ".ffn.w2.weight", ".ffn.w2.bias"})
        want.push_back("dec.0" + std::string(s));
    want.push_back("dec_lnf.gain");
    want.push_back("dec_lnf.bias");
    want.push_back("lm_head.weight");
    want.push_back("lm_head.bias");

    CHECK(tensor_names(p) == want);
    want.push_back("mimic_w.weight");
    CHECK(tensor_names(pm) == want);

    // tied encoder drops lm_head.weight, keeps the bias
    const auto enc = init_params<float>(tiny_encoder(), 0);
    const auto names = tensor_names(enc);
    CHECK(std::find(names.begin(), names.end(), "lm_head.weight") == names.end());
    CHECK(std::count(names.begin(), names.end(), "lm_head.bias") == 1);
    CHECK(std::find(names.begin(), names.end(), "pos_dec.weight") == names.end());
    CHECK(std::find(names.begin(), names.end(), "in_proj.weight") == names.end());
}

TEST_CASE("forward_states validates its stream arguments") {
    const auto enc = init_params<float>(tiny_encoder(), 1);
    const auto ed = init_params<float>(tiny_encdec(), 1);
    CHECK_NOTHROW((void)forward_states(enc, {1, 2, 3}));
    CHECK_THROWS_AS((void)forward_states(enc, {1, 2}, {3}), Error);   // stray dec_in
    CHECK_THROWS_AS((void)forward_states(ed, {1, 2}), Error);         // missing dec_in
    CHECK_THROWS_AS((void)forward_states(enc, {}), Error);            // empty source
    CHECK_THROWS_AS((void)forward_states(enc, {11}), Error);          // id out of range
    CHECK_THROWS_AS((void)forward_states(enc, std::vector<int>(9, 1)), Error);  // > max_seq

    const auto one = forward_states(enc, {4, 5});
    CHECK(one.enc.rows == 2);
    CHECK(one.enc.cols == 8);
    CHECK(&one.read() == &one.enc);

    const auto two = forward_states(ed, {4, 5, 6}, {2, 4});
    CHECK(two.enc.rows == 3);
    CHECK(two.dec.rows == 2);
    CHECK(&two.read() == &two.dec);
}

TEST_CASE("all-zero weights give exactly uniform predictions") {
    auto p = init_params<double>(tiny_encoder(), 3);
    visit_tensors(p, [&](const std::string&, Mat<double>& t) { t.zero(); });
    Example<double> ex;
    ex.src = {1, 2, 3, 4};
    ex.positions = {0, 2};
    ex.target_ids = {5, 7};
    const auto res = loss_and_grads(p, {ex}, Objective::cross_entropy, false);
    CHECK(res.loss == doctest::Approx(std::log(11.0)).epsilon(1e-12));
}

TEST_CASE("loss_and_grads validates batches") {
    const auto p = init_params<float>(tiny_encoder(), 4);
    CHECK_THROWS_AS((void)loss_and_grads(p, std::vector<Example<float>>{},
                                         Objective::cross_entropy),
                    Error);
    Example<float> no_pos;
    no_pos.src = {1, 2};
    CHECK_THROWS_AS((void)loss_and_grads(p, {no_pos}, Objective::cross_entropy), Error);
    Example<float> misaligned;
    misaligned.src = {1, 2};
    misaligned.positions = {0, 1};
    misaligned.target_ids = {3};
    CHECK_THROWS_AS((void)loss_and_grads(p, {misaligned}, Objective::cross_entropy), Error);
    Example<float> oob;
    oob.src = {1, 2};
    oob.positions = {5};
    oob.target_ids = {3};
    CHECK_THROWS_AS((void)loss_and_grads(p, {oob}, Objective::cross_entropy), Error);
    Example<float> mimic_on_plain;
    mimic_on_plain.src = {1, 2};
    mimic_on_plain.positions = {0};
    mimic_on_plain.target_vecs = {std::vector<float>(8, 0.0f)};
    CHECK_THROWS_AS((void)loss_and_grads(p, {mimic_on_plain}, Objective::mimic_mse), Error);
}

TEST_CASE("analytic gradients match central differences (encoder, cross entropy)") {
    auto p = init_params<double>(tiny_encoder(), 11);
    std::vector<Example<double>> batch(2);
    batch[0].src = {1, 2, 3, 4, 5};
    batch[0].positions = {1, 3};
    batch[0].target_ids = {6, 7};
    batch[1].src = {8, 9, 10};
    batch[1].positions = {0, 2};
    batch[1].target_ids = {1, 2};
    const auto rep = grad_check(p, batch, Objective::cross_entropy, 60, 1e-5, 77);
    CHECK(rep.coords_checked == 60);
    CHECK(rep.max_err < 1e-6);
}

TEST_CASE("analytic gradients match central differences (encoder-decoder, untied)") {
    auto p = init_params<double>(tiny_encdec(), 12);
    std::vector<Example<double>> batch(1);
    batch[0].src = {1, 2, 3, 4};
    batch[0].dec_in = {2, 5, 6};
    batch[0].positions = {0, 1, 2};
    batch[0].target_ids = {5, 6, 3};
    const auto rep = grad_check(p, batch, Objective::cross_entropy, 60, 1e-5, 78);
    CHECK(rep.max_err < 1e-6);
}

TEST_CASE("analytic gradients match central differences (mimic mse)") {
    ModelConfig c = tiny_encoder();
    c.mimic_head = true;
    auto p = init_params<double>(c, 13);
    Rng rng(5);
    std::vector<Example<double>> batch(2);
    batch[0].src = {1, 2, 3};
    batch[0].positions = {0, 2};
    batch[1].src = {4, 5, 6, 7};
    batch[1].positions = {3};
    for (auto& ex : batch)
        for (size_t i = 0; i < ex.positions.size(); ++i) {
            std::vector<double> t(8);
            for (auto& x : t) x = rng.normal();
            ex.target_vecs.push_back(std::move(t));
        }
    const auto rep = grad_check(p, batch, Objective::mimic_mse, 60, 1e-5, 79);
    CHECK(rep.max_err < 1e-6);
}

TEST_CASE("mimic_predict applies W to a state") {
    ModelConfig c = tiny_encoder();
    c.mimic_head = true;
    auto p = init_params<double>(c, 2);
    std::vector<double> state(8);
    for (size_t j = 0; j < 8; ++j) state[j] = double(j) - 3.0;
    const std::vector<double> out = mimic_predict(p, state.data());
    REQUIRE(out.size() == 8);
    for (size_t i = 0; i < 8; ++i) {
        double want = 0.0;
        for (size_t j = 0; j < 8; ++j) want += p.mimic_w[i][j] * state[j];
        CHECK(out[i] == doctest::Approx(want));
    }
    const auto plain = init_params<double>(tiny_encoder(), 2);
    CHECK_THROWS_AS((void)mimic_predict(plain, state.data()), Error);
}

TEST_CASE("lr schedule: linear warmup into inverse-sqrt decay") {
    const double base = 3e-3;
    const int warmup = 50;
    CHECK(lr_at(base, warmup, 1) == doctest::Approx(base * std::pow(50.0, -1.5)).epsilon(1e-12));
    CHECK(lr_at(base, warmup, warmup) ==
          doctest::Approx(base / std::sqrt(50.0)).epsilon(1e-12));
    for (int64_t t = 2; t <= warmup; ++t) CHECK(lr_at(base, warmup, t) > lr_at(base, warmup, t - 1));
    for (int64_t t = warmup + 1; t < warmup + 20; ++t)
        CHECK(lr_at(base, warmup, t) < lr_at(base, warmup, t - 1));
    CHECK(lr_at(base, warmup, 200) == doctest::Approx(base / std::sqrt(200.0)).epsilon(1e-12));
}

TEST_CASE("adam_step honors the frozen set and the step counter") {
    auto p = init_params<float>(tiny_encoder(), 21);
    const auto before = init_params<float>(tiny_encoder(), 21);
    Example<float> ex;
    ex.src = {1, 2, 3};
    ex.positions = {0, 1, 2};
    ex.target_ids = {4, 5, 6};
    auto res = loss_and_grads(p, {ex}, Objective::cross_entropy);

    OptimizerState st = init_optimizer(p, 1e-2, 10);
    st.frozen = {"pos_enc.weight"};
    const double lr1 = adam_step(p, res.grads, st);
    CHECK(st.t == 1);
    CHECK(lr1 == doctest::Approx(lr_at(1e-2, 10, 1)));
    CHECK(p.pos_enc.a == before.pos_enc.a);          // frozen
    CHECK_FALSE(p.tok_emb.a == before.tok_emb.a);    // trained

    res = loss_and_grads(p, {ex}, Objective::cross_entropy);
    const double lr2 = adam_step(p, res.grads, st);
    CHECK(st.t == 2);
    CHECK(lr2 == doctest::Approx(lr_at(1e-2, 10, 2)));

    CHECK_THROWS_AS((void)init_optimizer(p, 1e-2, 0), Error);
    // layout mismatch: gradients shaped for a different architecture
    const auto other = init_params<float>(tiny_encdec(), 0);
    const auto wrong = zero_like(other);
    CHECK_THROWS_AS((void)adam_step(p, wrong, st), Error);
}

TEST_CASE("adam converges on a trivially learnable batch") {
    auto p = init_params<float>(tiny_encoder(), 31);
    Example<float> ex;
    ex.src = {1, 2, 3, 4};
    ex.positions = {0, 1, 2, 3};
    ex.target_ids = {5, 6, 7, 8};
    // peak rate under this schedule is base_lr/sqrt(warmup), so a healthy
    // memorization rate (~1e-2) needs base_lr well above it
    OptimizerState st = init_optimizer(p, 5e-2, 10);
    const double first = loss_and_grads(p, {ex}, Objective::cross_entropy, false).loss;
    for (int step = 0; step < 150; ++step) {
        auto res = loss_and_grads(p, {ex}, Objective::cross_entropy);
        adam_step(p, res.grads, st);
    }
    const double last = loss_and_grads(p, {ex}, Objective::cross_entropy, false).loss;
    CHECK(last < 0.25 * first);
}

TEST_CASE("checkpoints round-trip bit-exactly and verify their layout") {
    const std::string path = "tmp_model_ckpt.txf";
    ModelConfig c = tiny_encdec();
    c.mimic_head = true;
    const auto p = init_params<float>(c, 9);
    save_checkpoint(p, path);

    CHECK(checkpoint_precision(path) == Precision::f32);
    const auto back = load_checkpoint<float>(path);
    CHECK(params_identical(p, back));
    CHECK(back.cfg.vocab_size == c.vocab_size);
    CHECK(back.cfg.h_e == c.h_e);
    CHECK(back.cfg.mode == ModelMode::encoder_decoder);
    CHECK(back.cfg.tie_lm_head == false);
    CHECK(back.cfg.mimic_head == true);

    // precision mismatch
    CHECK_THROWS_AS((void)load_checkpoint<double>(path), Error);

    // truncation
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        std::ofstream out("tmp_model_trunc.txf", std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    }
    CHECK_THROWS_AS((void)load_checkpoint<float>("tmp_model_trunc.txf"), Error);

    // trailing garbage
    {
        std::ofstream out("tmp_model_trail.txf", std::ios::binary | std::ios::trunc);
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.write("xx", 2);
    }
    CHECK_THROWS_AS((void)load_checkpoint<float>("tmp_model_trail.txf"), Error);

    // bad magic
    {
        std::ofstream out("tmp_model_magic.txf", std::ios::binary | std::ios::trunc);
        out.write("NOPE", 4);
    }
    CHECK_THROWS_AS((void)checkpoint_precision("tmp_model_magic.txf"), Error);
    CHECK_THROWS_AS((void)checkpoint_precision("tmp_model_missing.txf"), Error);

    const auto pd = init_params<double>(tiny_encoder(), 10);
    save_checkpoint(pd, path);
    CHECK(checkpoint_precision(path) == Precision::f64);
    const auto backd = load_checkpoint<double>(path);
    CHECK(params_identical(pd, backd));

    for (const char* tmp : {"tmp_model_ckpt.txf", "tmp_model_trunc.txf", "tmp_model_trail.txf",
                            "tmp_model_magic.txf"})
        std::remove(tmp);
}

TEST_CASE("tied and untied heads read the expected table") {
    auto tied = init_params<float>(tiny_encoder(), 1);
    CHECK(&tied.head() == &tied.tok_emb);
    ModelConfig c = tiny_encoder();
    c.tie_lm_head = false;
    auto untied = init_params<float>(c, 1);
    CHECK(&untied.head() == &untied.lm_head);
    CHECK(untied.lm_head.rows == 11);
    CHECK(untied.lm_head.cols == 8);
}
