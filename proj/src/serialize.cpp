#include "gema/serialize.hpp"

#include "gema/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gema {

namespace {

static_assert(std::endian::native == std::endian::little, "binary model format assumes little-endian hosts");

// ----- JSON

nlohmann::json matrix_json(const Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw Error(ErrorCode::SchemaMismatch, "matrix size does not match its data");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
  }
  return m;
}

nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const nlohmann::json& j) {
  const auto d = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()));
}

nlohmann::json mlp_json(const Mlp& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers()) {
    layers.push_back({{"activation", std::string(to_string(l.activation))},
                      {"weight", matrix_json(l.weight)},
                      {"bias", vector_json(l.bias)},
                      {"sn_u", vector_json(l.sn_u)},
                      {"sn_v", vector_json(l.sn_v)}});
  }
  return {{"dropout_rate", m.dropout_rate},
          {"dropout_on_output", m.dropout_on_output},
          {"spectral_norm", m.spectral_norm},
          {"layers", layers}};
}

Mlp mlp_from(const nlohmann::json& j) {
  Mlp m;
  m.dropout_rate = j.at("dropout_rate").get<double>();
  m.dropout_on_output = j.at("dropout_on_output").get<bool>();
  m.spectral_norm = j.at("spectral_norm").get<bool>();
  auto& layers = m.layers();
  for (const auto& l : j.at("layers")) {
    DenseLayer d;
    d.activation = activation_from_string(l.at("activation").get<std::string>());
    d.weight = matrix_from(l.at("weight"));
    d.bias = vector_from(l.at("bias"));
    d.sn_u = vector_from(l.at("sn_u"));
    d.sn_v = vector_from(l.at("sn_v"));
    if (d.bias.size() != d.weight.rows()) throw Error(ErrorCode::SchemaMismatch, "bias length does not match weight rows");
    if (!layers.empty() && layers.back().out_dim() != d.in_dim()) {
      throw Error(ErrorCode::SchemaMismatch, "consecutive layer dimensions disagree");
    }
    layers.push_back(std::move(d));
  }
  return m;
}

nlohmann::json meta_json(const FeatureMeta& m) {
  nlohmann::json j = {{"input_cols", m.input_cols},
                      {"output_cols", m.output_cols},
                      {"entity_levels", m.entity_levels},
                      {"time_levels", m.time_levels},
                      {"transform", std::string(to_string(m.transform))},
                      {"scaler",
                       {{"columns", m.scaler.columns},
                        {"mean", m.scaler.mean},
                        {"std", m.scaler.std},
                        {"clamped", m.scaler.clamped}}},
                      {"whitening",
                       {{"mean", vector_json(m.whitening.mean)},
                        {"w", matrix_json(m.whitening.w)},
                        {"epsilon", m.whitening.epsilon}}}};
  j["entity_col"] = m.entity_col ? nlohmann::json(*m.entity_col) : nlohmann::json(nullptr);
  j["time_col"] = m.time_col ? nlohmann::json(*m.time_col) : nlohmann::json(nullptr);
  return j;
}

FeatureMeta meta_from(const nlohmann::json& j) {
  FeatureMeta m;
  m.input_cols = j.at("input_cols").get<std::vector<std::string>>();
  m.output_cols = j.at("output_cols").get<std::vector<std::string>>();
  if (!j.at("entity_col").is_null()) m.entity_col = j.at("entity_col").get<std::string>();
  if (!j.at("time_col").is_null()) m.time_col = j.at("time_col").get<std::string>();
  m.entity_levels = j.at("entity_levels").get<std::vector<std::string>>();
  m.time_levels = j.at("time_levels").get<std::vector<std::string>>();
  m.transform = log_transform_from_string(j.at("transform").get<std::string>());
  const auto& s = j.at("scaler");
  m.scaler.columns = s.at("columns").get<std::vector<std::string>>();
  m.scaler.mean = s.at("mean").get<std::vector<double>>();
  m.scaler.std = s.at("std").get<std::vector<double>>();
  m.scaler.clamped = s.at("clamped").get<std::vector<bool>>();
  const auto& w = j.at("whitening");
  m.whitening.mean = vector_from(w.at("mean"));
  m.whitening.w = matrix_from(w.at("w"));
  m.whitening.epsilon = w.at("epsilon").get<double>();
  return m;
}

void check_model(const ProManModel& m) {
  if (m.d_x != static_cast<int>(m.meta.input_cols.size()) || m.d_y != static_cast<int>(m.meta.output_cols.size())) {
    throw Error(ErrorCode::SchemaMismatch, "model dimensions disagree with its column metadata");
  }
  if (m.decoder.n_layers() == 0 || m.decoder.in_dim() != m.decoder_in_dim() || m.decoder.out_dim() != m.d_y) {
    throw Error(ErrorCode::SchemaMismatch, "decoder shape disagrees with the model dimensions");
  }
  if (m.trunk.n_layers() == 0 || m.head_z.n_layers() == 0 || m.head_u.n_layers() == 0) {
    throw Error(ErrorCode::SchemaMismatch, "model is missing a network");
  }
  if (m.head_z.out_dim() != 2 * m.latent_dim || m.head_u.out_dim() != 2) {
    throw Error(ErrorCode::SchemaMismatch, "encoder head shapes disagree with the latent dimension");
  }
}

// ----- binary

class Writer {
 public:
  std::vector<char> bytes;

  template <class T>
  void pod(const T& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void strs(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) str(s);
  }
  void doubles(const double* d, std::size_t n) {
    u64(n);
    const char* p = reinterpret_cast<const char*>(d);
    bytes.insert(bytes.end(), p, p + n * sizeof(double));
  }
  void vec(const Vector& v) { doubles(v.data(), static_cast<std::size_t>(v.size())); }
  void mat(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    const char* p = reinterpret_cast<const char*>(m.data());
    bytes.insert(bytes.end(), p, p + m.size() * static_cast<Eigen::Index>(sizeof(double)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& b) : b_(b) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(b_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::string> strs() {
    const std::uint64_t n = u64();
    std::vector<std::string> v;
    for (std::uint64_t i = 0; i < n; ++i) v.push_back(str());
    return v;
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), b_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  Vector vec() {
    const auto d = doubles();
    return Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()));
  }
  Matrix mat() {
    const std::uint64_t r = u64();
    const std::uint64_t c = u64();
    if (c != 0 && r > (b_.size() / sizeof(double)) / c) throw Error(ErrorCode::SchemaMismatch, "matrix header is too large");
    need(r * c * sizeof(double));
    Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    std::memcpy(m.data(), b_.data() + pos_, r * c * sizeof(double));
    pos_ += r * c * sizeof(double);
    return m;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw Error(ErrorCode::SchemaMismatch, "model file is truncated");
  }
  const std::vector<char>& b_;
  std::size_t pos_ = 0;
};

void write_mlp(Writer& w, const Mlp& m) {
  w.f64(m.dropout_rate);
  w.pod<std::uint8_t>(m.dropout_on_output ? 1 : 0);
  w.pod<std::uint8_t>(m.spectral_norm ? 1 : 0);
  w.u64(m.n_layers());
  for (const auto& l : m.layers()) {
    w.str(std::string(to_string(l.activation)));
    w.mat(l.weight);
    w.vec(l.bias);
    w.vec(l.sn_u);
    w.vec(l.sn_v);
  }
}

Mlp read_mlp(Reader& r) {
  Mlp m;
  m.dropout_rate = r.f64();
  m.dropout_on_output = r.pod<std::uint8_t>() != 0;
  m.spectral_norm = r.pod<std::uint8_t>() != 0;
  const std::uint64_t n = r.u64();
  auto& layers = m.layers();
  for (std::uint64_t i = 0; i < n; ++i) {
    DenseLayer d;
    d.activation = activation_from_string(r.str());
    d.weight = r.mat();
    d.bias = r.vec();
    d.sn_u = r.vec();
    d.sn_v = r.vec();
    if (d.bias.size() != d.weight.rows()) throw Error(ErrorCode::SchemaMismatch, "bias length does not match weight rows");
    if (!layers.empty() && layers.back().out_dim() != d.in_dim()) {
      throw Error(ErrorCode::SchemaMismatch, "consecutive layer dimensions disagree");
    }
    layers.push_back(std::move(d));
  }
  return m;
}

std::optional<std::string> read_optional(Reader& r) {
  if (r.pod<std::uint8_t>() == 0) return std::nullopt;
  return r.str();
}

void write_optional(Writer& w, const std::optional<std::string>& s) {
  w.pod<std::uint8_t>(s ? 1 : 0);
  if (s) w.str(*s);
}

}  // namespace

nlohmann::json model_to_json(const ProManModel& model) {
  return {{"format", "gema-model"},
          {"version", kModelFormatVersion},
          {"d_x", model.d_x},
          {"d_y", model.d_y},
          {"latent_dim", model.latent_dim},
          {"config", model.config.to_json()},
          {"meta", meta_json(model.meta)},
          {"trunk", mlp_json(model.trunk)},
          {"head_z", mlp_json(model.head_z)},
          {"head_u", mlp_json(model.head_u)},
          {"decoder", mlp_json(model.decoder)},
          {"entity_embedding", matrix_json(model.entity_embedding.table)},
          {"time_embedding", matrix_json(model.time_embedding.table)},
          {"log_lambda", model.log_lambda},
          {"fitted", model.fitted}};
}

ProManModel model_from_json(const nlohmann::json& j) {
  ProManModel m;
  try {
    if (j.at("format").get<std::string>() != "gema-model") throw Error(ErrorCode::SchemaMismatch, "not a model file");
    if (j.at("version").get<std::uint32_t>() != kModelFormatVersion) {
      throw Error(ErrorCode::SchemaMismatch, "unsupported model format version");
    }
    m.d_x = j.at("d_x").get<int>();
    m.d_y = j.at("d_y").get<int>();
    m.latent_dim = j.at("latent_dim").get<int>();
    m.config = TrainConfig::from_json(j.at("config"));
    m.meta = meta_from(j.at("meta"));
    m.trunk = mlp_from(j.at("trunk"));
    m.head_z = mlp_from(j.at("head_z"));
    m.head_u = mlp_from(j.at("head_u"));
    m.decoder = mlp_from(j.at("decoder"));
    m.entity_embedding.table = matrix_from(j.at("entity_embedding"));
    m.time_embedding.table = matrix_from(j.at("time_embedding"));
    m.log_lambda = j.at("log_lambda").get<double>();
    m.fitted = j.at("fitted").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("model JSON: ") + e.what());
  }
  check_model(m);
  return m;
}

std::vector<char> model_to_bytes(const ProManModel& model) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kModelMagic), std::end(kModelMagic));
  w.pod(kModelFormatVersion);
  w.u64(static_cast<std::uint64_t>(model.d_x));
  w.u64(static_cast<std::uint64_t>(model.d_y));
  w.u64(static_cast<std::uint64_t>(model.latent_dim));
  w.str(model.config.to_json().dump());

  const FeatureMeta& meta = model.meta;
  w.strs(meta.input_cols);
  w.strs(meta.output_cols);
  write_optional(w, meta.entity_col);
  write_optional(w, meta.time_col);
  w.strs(meta.entity_levels);
  w.strs(meta.time_levels);
  w.str(std::string(to_string(meta.transform)));
  w.strs(meta.scaler.columns);
  w.doubles(meta.scaler.mean.data(), meta.scaler.mean.size());
  w.doubles(meta.scaler.std.data(), meta.scaler.std.size());
  w.u64(meta.scaler.clamped.size());
  for (bool b : meta.scaler.clamped) w.pod<std::uint8_t>(b ? 1 : 0);
  w.vec(meta.whitening.mean);
  w.mat(meta.whitening.w);
  w.f64(meta.whitening.epsilon);

  write_mlp(w, model.trunk);
  write_mlp(w, model.head_z);
  write_mlp(w, model.head_u);
  write_mlp(w, model.decoder);
  w.mat(model.entity_embedding.table);
  w.mat(model.time_embedding.table);
  w.f64(model.log_lambda);
  w.pod<std::uint8_t>(model.fitted ? 1 : 0);
  return w.bytes;
}

ProManModel model_from_bytes(const std::vector<char>& bytes) {
  if (bytes.size() < sizeof(kModelMagic) || std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw Error(ErrorCode::SchemaMismatch, "not a binary model file");
  }
  const std::vector<char> body(bytes.begin() + sizeof(kModelMagic), bytes.end());
  Reader r(body);
  if (r.pod<std::uint32_t>() != kModelFormatVersion) throw Error(ErrorCode::SchemaMismatch, "unsupported model format version");
  ProManModel m;
  m.d_x = static_cast<int>(r.u64());
  m.d_y = static_cast<int>(r.u64());
  m.latent_dim = static_cast<int>(r.u64());
  try {
    m.config = TrainConfig::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("embedded config: ") + e.what());
  }
  FeatureMeta& meta = m.meta;
  meta.input_cols = r.strs();
  meta.output_cols = r.strs();
  meta.entity_col = read_optional(r);
  meta.time_col = read_optional(r);
  meta.entity_levels = r.strs();
  meta.time_levels = r.strs();
  meta.transform = log_transform_from_string(r.str());
  meta.scaler.columns = r.strs();
  meta.scaler.mean = r.doubles();
  meta.scaler.std = r.doubles();
  const std::uint64_t nc = r.u64();
  for (std::uint64_t i = 0; i < nc; ++i) meta.scaler.clamped.push_back(r.pod<std::uint8_t>() != 0);
  meta.whitening.mean = r.vec();
  meta.whitening.w = r.mat();
  meta.whitening.epsilon = r.f64();

  m.trunk = read_mlp(r);
  m.head_z = read_mlp(r);
  m.head_u = read_mlp(r);
  m.decoder = read_mlp(r);
  m.entity_embedding.table = r.mat();
  m.time_embedding.table = r.mat();
  m.log_lambda = r.f64();
  m.fitted = r.pod<std::uint8_t>() != 0;
  if (!r.done()) throw Error(ErrorCode::SchemaMismatch, "trailing bytes after the model");
  check_model(m);
  return m;
}

void save_model(const ProManModel& model, const std::string& path) {
  const bool json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  if (json) {
    out << model_to_json(model).dump(1) << "\n";
  } else {
    const auto bytes = model_to_bytes(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path);
}

ProManModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= sizeof(kModelMagic) && std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) == 0) {
    return model_from_bytes(bytes);
  }
  try {
    return model_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path + " is neither a binary nor a JSON model: " + e.what());
  }
}

}  // namespace gema
