#include <fstream>

#include "catdiff/checkpoint.hpp"
#include "catdiff/config.hpp"
#include "catdiff/errors.hpp"
#include "catdiff/serialize.hpp"
#include "catdiff/teacher.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace catdiff;

TEST_CASE("config defaults") {
  const Config c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.num_patches() == 64);
  CHECK(c.latent_channels() == 48);
  CHECK(c.latent_grid() == 8);
  CHECK(c.n_train == 640);
  CHECK(c.n_test == 160);
}

TEST_CASE("config round-trips through text") {
  Config c = testutil::tiny_config();
  c.lr = 3.3e-4;
  c.beta_start = 1.25e-3;
  c.vprompt_source = "ground_truth";
  c.eval_mask = "bbox";
  c.output_dir = "elsewhere";
  CHECK(Config::parse(c.serialize()) == c);
  CHECK(Config::parse(Config{}.serialize()) == Config{});

  const auto dir = testutil::temp_dir("config_roundtrip");
  c.save(dir / "c.txt");
  CHECK(Config::load(dir / "c.txt") == c);
  CHECK_THROWS_AS(Config::load(dir / "missing.txt"), IoError);
}

TEST_CASE("config parsing") {
  const Config c = Config::parse("# comment\n  seed = 11  \n\nclasses=4 # trailing\n");
  CHECK(c.seed == 11);
  CHECK(c.classes == 4);
  CHECK_THROWS_AS(Config::parse("colour = red\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("seed = eleven\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("seed 11\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("classes = 0\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("patch = 5\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("latent_patch = 3\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("heads = 5\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("resolution = 24\npatch = 8\n"), ConfigError);  // odd patch grid
  CHECK_THROWS_AS(Config::parse("beta_end = 1.0\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("vprompt_source = oracle\n"), ConfigError);
}

TEST_CASE("stage signatures track architecture only") {
  Config a, b;
  b.teacher_epochs = 99;
  b.seed = 3;
  CHECK(a.teacher_signature() == b.teacher_signature());
  b.width = 16;
  CHECK(a.teacher_signature() != b.teacher_signature());
  CHECK(a.denoiser_signature("full") != a.denoiser_signature("baseline"));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("checkpoint save → load → save is byte-identical") {
  const TeacherEncoder teacher(TeacherConfig{}, 1);
  const Checkpoint ck = make_checkpoint("teacher", 42, 7, teacher.parameters());
  const auto dir = testutil::temp_dir("checkpoint");
  save_checkpoint(dir / "a.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt", "teacher", 42);
  CHECK(back.stage == "teacher");
  CHECK(back.seed == 7);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == ck.tensors[i].first);
    CHECK(bit_equal(back.tensors[i].second, ck.tensors[i].second));
  }
  save_checkpoint(dir / "b.ckpt", back);
  CHECK(read_file_bytes(dir / "a.ckpt") == read_file_bytes(dir / "b.ckpt"));

  const auto bytes = read_file_bytes(dir / "a.ckpt");
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CATC");

  // Values are snapshots, not aliases.
  teacher.parameters()[0].second[0] += 1.0f;
  CHECK(bit_equal(ck.tensors[0].second, back.tensors[0].second));
}

TEST_CASE("checkpoint load errors") {
  const auto dir = testutil::temp_dir("checkpoint_errors");
  const Checkpoint ck = make_checkpoint("inpainter", 5, 1, {{"w", Tensor({2}, 1.5f)}});
  save_checkpoint(dir / "c.ckpt", ck);
  CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt", "inpainter", 6), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt", "teacher", 5), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);

  auto bytes = encode_checkpoint(ck);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
  bad = bytes;
  bad[4] = 9;  // version
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
  bad = bytes;
  bad.resize(bad.size() - 2);
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
}

TEST_CASE("tensor wire format") {
  ByteWriter w;
  w.tensor(Tensor({2, 1}, std::vector<float>{1.0f, -2.0f}));
  const auto& b = w.buffer();
  REQUIRE(b.size() == 4 + 8 + 8);
  CHECK(b[0] == 2);
  CHECK(b[4] == 2);
  CHECK(b[8] == 1);
  ByteReader r(b);
  const Tensor t = r.tensor();
  CHECK(t.shape() == Shape{2, 1});
  CHECK(t[1] == -2.0f);
  CHECK(r.at_end());
}
