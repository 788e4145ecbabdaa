#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "modaladapt/checkpoint.hpp"
#include "modaladapt/gradcheck.hpp"
#include "modaladapt/model.hpp"
#include "modaladapt/optim.hpp"
#include "modaladapt/rng.hpp"

using namespace modaladapt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.linguistic_dim = 5;
  c.acoustic_dim = 4;
  c.hidden_width = 6;
  c.embedding_dim = 3;
  c.num_text_ff = 2;
  c.num_common_ff = 3;
  c.conv = {8, 4, 5};  // width 8, stride 4, filters 5 (pad 2 each side)
  c.speaker_aware_common = {2, 3};
  return c;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::vector<double> random_wave(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("modaladapt_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("build_model is deterministic for a fixed seed") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel a = build_model(cfg, {"s1", "s2"}, 42);
  MultimodalModel b = build_model(cfg, {"s2", "s1"}, 42);  // order must not matter
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].id == pb[i].id);
    REQUIRE(pa[i].size == pb[i].size);
    for (std::size_t j = 0; j < pa[i].size; ++j) REQUIRE(pa[i].data[j] == pb[i].data[j]);
  }
  MultimodalModel c = build_model(cfg, {"s1", "s2"}, 43);
  bool any_diff = false;
  auto pc = c.params();
  for (std::size_t i = 0; i < pa.size() && !any_diff; ++i) {
    for (std::size_t j = 0; j < pa[i].size; ++j) {
      if (pa[i].data[j] != pc[i].data[j]) {
        any_diff = true;
        break;
      }
    }
  }
  REQUIRE(any_diff);
}

TEST_CASE("parameter count matches the closed-form formula") {
  // Full-scale dims, multimodal preset (speech encoder, last 2 common
  // layers speaker-aware).
  ModelConfig c;
  c.linguistic_dim = 331;
  c.acoustic_dim = 87;
  c.hidden_width = 1024;
  c.embedding_dim = 128;
  c.conv = {400, 80, 64};
  apply_multimodal_preset(c);
  const std::size_t speakers = 44;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < speakers; ++i) ids.push_back("v" + std::to_string(100 + i));
  MultimodalModel model = build_model(c, ids, 1);

  const std::size_t L = c.linguistic_dim, A = c.acoustic_dim, H = c.hidden_width,
                    E = c.embedding_dim;
  const std::size_t expect =
      (L * H + H) + (H * H + H)                      // text encoder
      + (64 * 400 + 64) + (64 * H + H)               // speech encoder
      + (H * H + H) + 2 * ((H + E) * H + H)          // common stack (layers 2,3 aware)
      + (H * A + A)                                  // linear output
      + speakers * E;                                // embedding table
  std::size_t got = 0;
  for (const auto& p : model.params()) got += p.size;
  REQUIRE(got == expect);
}

TEST_CASE("vanilla preset parameter count feeds the embedding to all FF layers") {
  ModelConfig c = tiny_config();
  apply_vanilla_preset(c);
  REQUIRE_FALSE(c.has_speech_encoder);
  MultimodalModel model = build_model(c, {"s1"}, 1);
  const std::size_t L = c.linguistic_dim, A = c.acoustic_dim, H = c.hidden_width,
                    E = c.embedding_dim;
  const std::size_t expect = ((L + E) * H + H) + ((H + E) * H + H)  // text encoder, both aware
                             + 3 * ((H + E) * H + H)                // common stack, all aware
                             + (H * A + A) + E;
  std::size_t got = 0;
  for (const auto& p : model.params()) got += p.size;
  REQUIRE(got == expect);
}

TEST_CASE("speaker-aware common layers widen their input by the embedding dim") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1"}, 7);
  REQUIRE(model.common_ff[0].in_dim() == cfg.hidden_width);
  REQUIRE(model.common_ff[1].in_dim() == cfg.hidden_width + cfg.embedding_dim);
  REQUIRE(model.common_ff[2].in_dim() == cfg.hidden_width + cfg.embedding_dim);
}

TEST_CASE("forward_text shape contract and unknown speaker error") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1"}, 7);
  auto rng = make_rng(3, "fwd");
  const Matrix ling = random_matrix(9, cfg.linguistic_dim, rng);
  auto [pred, trace] = forward_text(model, ling, std::string("s1"));
  REQUIRE(pred.rows() == 9);
  REQUIRE(pred.cols() == cfg.acoustic_dim);
  REQUIRE(trace.common_outputs.size() == 3);
  REQUIRE_THROWS_WITH(forward_text(model, ling, std::string("nobody")),
                      Catch::Matchers::ContainsSubstring("nobody"));
}

TEST_CASE("different embeddings change the output, equal embeddings match bit-exactly") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1", "s2"}, 7);
  auto rng = make_rng(5, "emb");
  const Matrix ling = random_matrix(4, cfg.linguistic_dim, rng);
  auto [p1, t1] = forward_text(model, ling, std::string("s1"));
  auto [p2, t2] = forward_text(model, ling, std::string("s2"));
  REQUIRE_FALSE(p1 == p2);

  model.embeddings.set("s2", model.embeddings.row("s1"));
  auto [p3, t3] = forward_text(model, ling, std::string("s2"));
  REQUIRE(p1 == p3);
}

TEST_CASE("forward_text is deterministic") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1"}, 11);
  auto rng = make_rng(13, "det");
  const Matrix ling = random_matrix(6, cfg.linguistic_dim, rng);
  auto [a, ta] = forward_text(model, ling, std::string("s1"));
  auto [b, tb] = forward_text(model, ling, std::string("s1"));
  REQUIRE(a == b);
}

TEST_CASE("tiny model forward matches a hand computation") {
  ModelConfig c;
  c.linguistic_dim = 1;
  c.acoustic_dim = 1;
  c.hidden_width = 1;
  c.embedding_dim = 1;
  c.num_text_ff = 1;
  c.num_common_ff = 1;
  c.has_speech_encoder = false;
  c.speaker_aware_common = {1};
  c.tied_layers = {1};
  MultimodalModel model = build_model(c, {"s"}, 0);
  model.text_encoder[0].weight(0, 0) = 0.5;
  model.text_encoder[0].bias[0] = 0.1;
  model.common_ff[0].weight(0, 0) = 0.4;   // hidden slot
  model.common_ff[0].weight(1, 0) = -0.3;  // embedding slot
  model.common_ff[0].bias[0] = 0.2;
  model.output_layer.weight(0, 0) = 2.0;
  model.output_layer.bias[0] = -0.1;
  model.embeddings.set("s", {0.7});

  Matrix ling(1, 1);
  ling(0, 0) = 0.9;
  auto [pred, trace] = forward_text(model, ling, std::string("s"));

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double h_text = sig(0.9 * 0.5 + 0.1);
  const double h_common = sig(h_text * 0.4 + 0.7 * (-0.3) + 0.2);
  const double expect = 2.0 * h_common - 0.1;
  REQUIRE_THAT(pred(0, 0), Catch::Matchers::WithinAbs(expect, 1e-15));
  REQUIRE_THAT(trace.common_outputs[0](0, 0), Catch::Matchers::WithinAbs(h_common, 1e-15));
}

TEST_CASE("forward_speech produces one frame per stride and shares the common stack") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1"}, 17);
  auto rng = make_rng(19, "speech");
  const std::size_t frames = 10;
  const std::vector<double> wave = random_wave(frames * cfg.conv.stride, rng);
  auto [pred, trace] = forward_speech(model, wave, std::string("s1"));
  REQUIRE(pred.rows() == frames);
  REQUIRE(pred.cols() == cfg.acoustic_dim);

  const Matrix ling = random_matrix(4, cfg.linguistic_dim, rng);
  auto [text_before, tt0] = forward_text(model, ling, std::string("s1"));
  auto [speech_before, ts0] = forward_speech(model, wave, std::string("s1"));

  // Mutating a common-stack weight must change both paths' outputs.
  model.common_ff[1].weight(0, 0) += 0.25;
  auto [text_after, tt1] = forward_text(model, ling, std::string("s1"));
  auto [speech_after, ts1] = forward_speech(model, wave, std::string("s1"));
  REQUIRE_FALSE(text_before == text_after);
  REQUIRE_FALSE(speech_before == speech_after);
}

TEST_CASE("forward_speech equals manual composition of conv and dense ops") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1"}, 23);
  auto rng = make_rng(29, "compose");
  const std::vector<double> wave = random_wave(6 * cfg.conv.stride, rng);
  auto [pred, trace] = forward_speech(model, wave, std::string("s1"));

  const Matrix conv_out = conv1d_forward(model.speech_conv, wave);
  Matrix x = dense_forward(model.speech_ff, conv_out);
  const auto& emb = model.embeddings.row("s1");
  for (std::size_t l = 1; l <= 3; ++l) {
    Matrix input = x;
    if (cfg.speaker_aware_common.count(l)) {
      Matrix widened(x.rows(), x.cols() + emb.size());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t cc = 0; cc < x.cols(); ++cc) widened(r, cc) = x(r, cc);
        for (std::size_t cc = 0; cc < emb.size(); ++cc) widened(r, x.cols() + cc) = emb[cc];
      }
      input = widened;
    }
    x = dense_forward(model.common_ff[l - 1], input);
  }
  const Matrix expect = dense_forward(model.output_layer, x);
  REQUIRE(pred == expect);
}

TEST_CASE("forward_speech rejects waves shorter than one frame and missing encoder") {
  ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1"}, 31);
  const std::vector<double> tiny_wave(2, 0.1);
  REQUIRE_THROWS_AS(forward_speech(model, tiny_wave, std::string("s1")), std::invalid_argument);

  apply_vanilla_preset(cfg);
  MultimodalModel vanilla = build_model(cfg, {"s1"}, 31);
  const std::vector<double> wave(64, 0.1);
  REQUIRE_THROWS_WITH(forward_speech(vanilla, wave, std::string("s1")),
                      Catch::Matchers::ContainsSubstring("no speech encoder"));
}

TEST_CASE("backward_path embedding gradient equals the hand-derived chain") {
  // Same 1-node model as the hand-computed forward; two frames.
  ModelConfig c;
  c.linguistic_dim = 1;
  c.acoustic_dim = 1;
  c.hidden_width = 1;
  c.embedding_dim = 1;
  c.num_text_ff = 1;
  c.num_common_ff = 1;
  c.has_speech_encoder = false;
  c.speaker_aware_common = {1};
  MultimodalModel model = build_model(c, {"s"}, 0);
  model.text_encoder[0].weight(0, 0) = 0.5;
  model.text_encoder[0].bias[0] = 0.1;
  model.common_ff[0].weight(0, 0) = 0.4;
  model.common_ff[0].weight(1, 0) = -0.3;
  model.common_ff[0].bias[0] = 0.2;
  model.output_layer.weight(0, 0) = 2.0;
  model.output_layer.bias[0] = -0.1;
  model.embeddings.set("s", {0.7});

  Matrix ling(2, 1);
  ling(0, 0) = 0.9;
  ling(1, 0) = -0.4;
  Matrix target(2, 1);
  target(0, 0) = 0.3;
  target(1, 0) = -0.2;

  auto [pred, trace] = forward_text(model, ling, std::string("s"));
  MseResult mse = mse_loss(pred, target);
  GradientSet grads = backward_path(model, trace, mse.d_pred);

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double d_emb = 0.0;
  for (std::size_t t = 0; t < 2; ++t) {
    const double h_text = sig(ling(t, 0) * 0.5 + 0.1);
    const double z_c = h_text * 0.4 + 0.7 * (-0.3) + 0.2;
    const double h_c = sig(z_c);
    const double p = 2.0 * h_c - 0.1;
    const double dp = 2.0 * (p - target(t, 0)) / 2.0;  // mse over 2 entries
    const double dh_c = dp * 2.0;
    const double dz_c = dh_c * h_c * (1.0 - h_c);
    d_emb += dz_c * (-0.3);
  }
  const auto* g = grads.find("embedding/s");
  REQUIRE(g != nullptr);
  REQUIRE_THAT((*g)[0], Catch::Matchers::WithinRel(d_emb, 1e-12));
}

TEST_CASE("backward_path with zero extra hidden gradients equals plain backprop") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1"}, 37);
  auto rng = make_rng(41, "extra0");
  const Matrix ling = random_matrix(5, cfg.linguistic_dim, rng);
  const Matrix target = random_matrix(5, cfg.acoustic_dim, rng);
  auto [pred, trace] = forward_text(model, ling, std::string("s1"));
  MseResult mse = mse_loss(pred, target);

  std::map<std::size_t, Matrix> zeros;
  for (std::size_t l = 1; l <= 3; ++l) {
    zeros.emplace(l, Matrix(trace.common_outputs[l - 1].rows(),
                            trace.common_outputs[l - 1].cols()));
  }
  GradientSet plain = backward_path(model, trace, mse.d_pred);
  GradientSet with_zeros = backward_path(model, trace, mse.d_pred, zeros);
  for (const auto& [id, g] : plain) {
    const auto* other = with_zeros.find(id);
    REQUIRE(other != nullptr);
    REQUIRE(*other == g);
  }
}

TEST_CASE("backward_path with injected hidden gradients matches finite differences") {
  const ModelConfig cfg = tiny_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    MultimodalModel model = build_model(cfg, {"s1"}, seed);
    auto rng = make_rng(seed, "extra_fd");
    const Matrix ling = random_matrix(3, cfg.linguistic_dim, rng);
    const Matrix target = random_matrix(3, cfg.acoustic_dim, rng);
    std::map<std::size_t, Matrix> extra;
    extra.emplace(1, random_matrix(3, cfg.hidden_width, rng));
    extra.emplace(3, random_matrix(3, cfg.hidden_width, rng));

    // loss = mse(prediction) + sum_l <extra_l, h^l>
    auto loss = [&] {
      auto [pred, trace] = forward_text(model, ling, std::string("s1"));
      double value = mse_loss(pred, target).loss;
      for (const auto& [l, dh] : extra) {
        const Matrix& h = trace.common_outputs[l - 1];
        for (std::size_t i = 0; i < h.size(); ++i) value += dh.data()[i] * h.data()[i];
      }
      return value;
    };

    auto [pred, trace] = forward_text(model, ling, std::string("s1"));
    MseResult mse = mse_loss(pred, target);
    GradientSet analytic = backward_path(model, trace, mse.d_pred, extra);
    const GradCheckReport report =
        finite_difference_check(loss, model.params(), analytic, 1e-5, 1e-4);
    INFO("seed " << seed << " worst " << report.worst.param_id << " rel "
                 << report.max_rel_error);
    REQUIRE(report.passed());
  }
}

TEST_CASE("backward_embedding_only returns exactly the embedding row gradient") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1", "s2"}, 47);
  auto rng = make_rng(53, "embonly");
  const Matrix ling = random_matrix(4, cfg.linguistic_dim, rng);
  const Matrix target = random_matrix(4, cfg.acoustic_dim, rng);
  auto [pred, trace] = forward_text(model, ling, std::string("s1"));
  MseResult mse = mse_loss(pred, target);

  GradientSet full = backward_path(model, trace, mse.d_pred);
  GradientSet only = backward_embedding_only(model, trace, mse.d_pred);
  REQUIRE(only.size() == 1);
  const auto* a = only.find("embedding/s1");
  const auto* b = full.find("embedding/s1");
  REQUIRE(a != nullptr);
  REQUIRE(b != nullptr);
  REQUIRE(*a == *b);

  // Speech path too.
  const std::vector<double> wave = random_wave(8 * cfg.conv.stride, rng);
  auto [spred, strace] = forward_speech(model, wave, std::string("s1"));
  const Matrix starget = random_matrix(spred.rows(), cfg.acoustic_dim, rng);
  MseResult smse = mse_loss(spred, starget);
  GradientSet sfull = backward_path(model, strace, smse.d_pred);
  GradientSet sonly = backward_embedding_only(model, strace, smse.d_pred);
  REQUIRE(sonly.size() == 1);
  REQUIRE(*sonly.find("embedding/s1") == *sfull.find("embedding/s1"));
}

TEST_CASE("vanilla preset embedding gradient flows through text layers") {
  ModelConfig cfg = tiny_config();
  apply_vanilla_preset(cfg);
  MultimodalModel model = build_model(cfg, {"s1"}, 83);
  auto rng = make_rng(89, "vanilla_emb");
  const Matrix ling = random_matrix(3, cfg.linguistic_dim, rng);
  const Matrix target = random_matrix(3, cfg.acoustic_dim, rng);
  auto [pred, trace] = forward_text(model, ling, std::string("s1"));
  MseResult mse = mse_loss(pred, target);
  GradientSet full = backward_path(model, trace, mse.d_pred);
  GradientSet only = backward_embedding_only(model, trace, mse.d_pred);
  REQUIRE(only.size() == 1);
  REQUIRE(*only.find("embedding/s1") == *full.find("embedding/s1"));
}

TEST_CASE("select_params partitions the model") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1", "s2"}, 59);
  const auto all = model.param_ids(ParamScope::all());
  const auto shared = model.param_ids(ParamScope::shared_no_embedding());
  const auto text = model.param_ids(ParamScope::text_encoder_only());
  const auto speech = model.param_ids(ParamScope::speech_encoder_only());
  const auto common = model.param_ids(ParamScope::common_only());
  const auto e1 = model.param_ids(ParamScope::embedding_only("s1"));
  const auto e2 = model.param_ids(ParamScope::embedding_only("s2"));

  std::set<std::string> rebuilt;
  for (const auto* s : {&text, &speech, &common, &e1, &e2}) {
    for (const auto& id : *s) {
      REQUIRE(rebuilt.insert(id).second);  // disjoint
    }
  }
  REQUIRE(rebuilt == all);

  std::set<std::string> shared_rebuilt;
  for (const auto* s : {&text, &speech, &common}) {
    for (const auto& id : *s) shared_rebuilt.insert(id);
  }
  REQUIRE(shared_rebuilt == shared);

  REQUIRE(e1.size() == 1);
  REQUIRE(*e1.begin() == "embedding/s1");
  REQUIRE(speech == std::set<std::string>{"speech_conv/K", "speech_conv/b", "speech_ff/W",
                                          "speech_ff/b"});
  REQUIRE_THROWS_WITH(model.param_ids(ParamScope::embedding_only("ghost")),
                      Catch::Matchers::ContainsSubstring("ghost"));
}

TEST_CASE("embedding-only optimizer step changes nothing else") {
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1", "s2"}, 61);
  auto rng = make_rng(67, "isolation");
  const Matrix ling = random_matrix(4, cfg.linguistic_dim, rng);
  const Matrix target = random_matrix(4, cfg.acoustic_dim, rng);

  const auto before = snapshot_params(model);
  auto [pred, trace] = forward_text(model, ling, std::string("s1"));
  MseResult mse = mse_loss(pred, target);
  GradientSet grads = backward_embedding_only(model, trace, mse.d_pred);
  AdamOptimizer adam;
  adam.step(model.params(ParamScope::embedding_only("s1")), grads);

  const auto after = snapshot_params(model);
  for (const auto& [id, vals] : before) {
    if (id == "embedding/s1") {
      REQUIRE_FALSE(after.at(id) == vals);
    } else {
      REQUIRE(after.at(id) == vals);
    }
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const fs::path dir = temp_dir("checkpoint");
  const ModelConfig cfg = tiny_config();
  MultimodalModel model = build_model(cfg, {"s1", "s2", "s3"}, 71);
  model.trained = true;
  model.speech_encoder_trained = true;

  const fs::path path = dir / "model.mmck";
  save_checkpoint(model, path);
  MultimodalModel loaded = load_checkpoint(path);
  REQUIRE(loaded.trained);
  REQUIRE(loaded.speech_encoder_trained);
  REQUIRE(loaded.config.hidden_width == cfg.hidden_width);

  auto pa = model.params(), pb = loaded.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].id == pb[i].id);
    for (std::size_t j = 0; j < pa[i].size; ++j) REQUIRE(pa[i].data[j] == pb[i].data[j]);
  }

  // save(load(x)) writes identical bytes
  const fs::path path2 = dir / "model2.mmck";
  save_checkpoint(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(b1 == b2);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  const fs::path dir = temp_dir("checkpoint_bad");
  const fs::path path = dir / "bad.mmck";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTCK";
  }
  REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("bad magic"));

  MultimodalModel model = build_model(tiny_config(), {"s1"}, 73);
  const fs::path good = dir / "good.mmck";
  save_checkpoint(model, good);
  // truncate the tensor section
  const auto size = fs::file_size(good);
  fs::resize_file(good, size - 16);
  REQUIRE_THROWS_WITH(load_checkpoint(good), Catch::Matchers::ContainsSubstring("truncated"));
  fs::remove_all(dir);
}
