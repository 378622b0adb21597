#include "gema/error.hpp"
#include "gema/proman_vae.hpp"
#include "gema/serialize.hpp"
#include "gema/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

using namespace gema;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Internal;
}

struct Fixture {
  DatasetFrame frame;
  ProManModel model;
};

const Fixture& trained() {
  static const Fixture fx = [] {
    Fixture f;
    f.frame = gen_scenario_a(150, 3).frame;
    TrainConfig c;
    c.hidden_dim = 8;
    c.epochs = 4;
    c.spectral_norm = true;
    c.seed = 5;
    f.model = fit(f.frame, c).model;
    return f;
  }();
  return fx;
}

// Panel model so both embedding tables and their level lists are exercised.
ProManModel panel_model() {
  std::string csv = "firm,year,x1,x2,y\n";
  for (int i = 0; i < 30; ++i) {
    csv += "f" + std::to_string(i % 4) + "," + std::to_string(2000 + i % 3) + "," + std::to_string(1.0 + 0.1 * i) + "," +
           std::to_string(2.0 + 0.05 * i) + "," + std::to_string(1.5 + 0.07 * ((i * 7) % 11)) + "\n";
  }
  const Schema s{{"firm", ColumnRole::EntityId}, {"year", ColumnRole::TimeId}, {"x1", ColumnRole::Input},
                 {"x2", ColumnRole::Input},      {"y", ColumnRole::Output}};
  TrainConfig c;
  c.hidden_dim = 6;
  c.epochs = 2;
  return fit(parse_csv(csv, s), c).model;
}

void check_same_scores(const ProManModel& a, const ProManModel& b, const DatasetFrame& f, double tol) {
  const auto sa = efficiency_scores(a, f);
  const auto sb = efficiency_scores(b, f);
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (tol == 0.0) {
      CHECK(sa[i].efficiency == sb[i].efficiency);
      CHECK(sa[i].expected_u == sb[i].expected_u);
    } else {
      CHECK(std::abs(sa[i].efficiency - sb[i].efficiency) <= tol * std::abs(sa[i].efficiency));
      CHECK(std::abs(sa[i].expected_u - sb[i].expected_u) <= tol * std::abs(sa[i].expected_u));
    }
  }
}

}  // namespace

TEST_CASE("binary round trip is bit exact") {
  const Fixture& fx = trained();
  const std::vector<char> bytes = model_to_bytes(fx.model);
  REQUIRE(bytes.size() > 12);
  CHECK(std::memcmp(bytes.data(), kModelMagic, 8) == 0);
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  CHECK(version == kModelFormatVersion);

  const ProManModel back = model_from_bytes(bytes);
  CHECK(model_to_bytes(back) == bytes);
  CHECK(back.fitted);
  CHECK(back.log_lambda == fx.model.log_lambda);
  CHECK(back.config.to_json() == fx.model.config.to_json());
  CHECK(back.meta.input_cols == fx.model.meta.input_cols);
  check_same_scores(fx.model, back, fx.frame, 0.0);

  const ProManModel panel = panel_model();
  const ProManModel panel_back = model_from_bytes(model_to_bytes(panel));
  CHECK(model_to_bytes(panel_back) == model_to_bytes(panel));
  CHECK(panel_back.meta.entity_levels == panel.meta.entity_levels);
  CHECK(panel_back.meta.time_levels == panel.meta.time_levels);
}

TEST_CASE("json round trip") {
  const Fixture& fx = trained();
  const nlohmann::json j = model_to_json(fx.model);
  const ProManModel back = model_from_json(nlohmann::json::parse(j.dump()));
  check_same_scores(fx.model, back, fx.frame, 1e-15);
  CHECK(model_to_json(back) == j);
}

TEST_CASE("files pick their format from the extension and the leading bytes") {
  const Fixture& fx = trained();
  save_model(fx.model, "roundtrip_model.bin");
  save_model(fx.model, "roundtrip_model.json");
  {
    std::ifstream in("roundtrip_model.bin", std::ios::binary);
    char head[8];
    in.read(head, 8);
    CHECK(std::memcmp(head, kModelMagic, 8) == 0);
  }
  {
    std::ifstream in("roundtrip_model.json");
    CHECK(in.peek() == '{');
  }
  check_same_scores(fx.model, load_model("roundtrip_model.bin"), fx.frame, 0.0);
  check_same_scores(fx.model, load_model("roundtrip_model.json"), fx.frame, 1e-15);
  CHECK(code_of([] { load_model("does_not_exist.bin"); }) == ErrorCode::Io);
}

TEST_CASE("damaged files are rejected") {
  const Fixture& fx = trained();
  const std::vector<char> bytes = model_to_bytes(fx.model);

  std::vector<char> bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { model_from_bytes(bad_magic); }) == ErrorCode::SchemaMismatch);

  std::vector<char> bad_version = bytes;
  bad_version[8] = 7;
  CHECK(code_of([&] { model_from_bytes(bad_version); }) == ErrorCode::SchemaMismatch);

  for (std::size_t cut : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<char> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK(code_of([&] { model_from_bytes(truncated); }) == ErrorCode::SchemaMismatch);
  }
  std::vector<char> trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { model_from_bytes(trailing); }) == ErrorCode::SchemaMismatch);

  nlohmann::json j = model_to_json(fx.model);
  j["d_x"] = 5;
  CHECK(code_of([&] { model_from_json(j); }) == ErrorCode::SchemaMismatch);
  CHECK(code_of([] { model_from_json({{"format", "other"}}); }) == ErrorCode::SchemaMismatch);

  std::ofstream("garbage_model.bin") << "not a model";
  CHECK(code_of([] { load_model("garbage_model.bin"); }) == ErrorCode::SchemaMismatch);
}
