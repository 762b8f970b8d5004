#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "diffstack/checkpoint.hpp"
#include "oracles.hpp"

using namespace diffstack;

TEST_CASE("checkpoint round trip is value-exact") {
  for (Family f : kAllFamilies) {
    Checkpoint ck;
    ck.model = oracle::random_model(f, 7, 5, 42);
    ck.model.params.get(Role::V).data[0] = real(1) / 3;
    ck.model.params.get(Role::V).data[1] = real(-1e-300);
    ck.model.options.literal_noop = true;
    ck.model.options.noise.sigma2 = real(0.0123);
    ck.seed = 99;
    ck.steps = 1234;
    ck.info["grammar"] = "d2";
    ck.info["note"] = "two words";
    ck.state.push_back({"adam_m/U", Matrix(2, 3, real(0.1))});
    std::stringstream buf;
    write_checkpoint(buf, ck);
    Checkpoint back = read_checkpoint(buf);
    CHECK(back.model.params == ck.model.params);
    CHECK(back.model.options == ck.model.options);
    CHECK(back.seed == 99);
    CHECK(back.steps == 1234);
    CHECK(back.info == ck.info);
    CHECK(back.state == ck.state);
  }
}

TEST_CASE("checkpoint files") {
  auto path = std::filesystem::temp_directory_path() / "diffstack-test.ckpt";
  Checkpoint ck;
  ck.model = oracle::random_model(Family::GRU, 4, 3, 1);
  save_checkpoint(path, ck);
  CHECK(load_checkpoint(path).model.params == ck.model.params);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  std::stringstream bad("not a checkpoint\n");
  CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
  std::stringstream buf;
  write_checkpoint(buf, ck);
  std::string text = buf.str();
  std::stringstream cut(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(cut), CheckpointError);
}

TEST_CASE("number formatting") {
  for (real x : {real(0), real(1) / 3, real(-2.5e-17), real(6.02e23)}) CHECK(parse_real(format_real(x)) == x);
  CHECK_THROWS_AS(parse_real("1.5x"), CheckpointError);
}
