#pragma once

// Checkpoint container (see docs/checkpoint_format.md):
//
//   "PGCKPT1"  u16 version  u32 meta_len  meta (JSON, UTF-8)
//   tensors in declared order, row-major f32
//   u8 has_optimizer [ u64 step, f64 lr, beta1, beta2, eps, weight_decay,
//                      first moments (f32), second moments (f32) ]

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poigraph/autodiff.hpp"
#include "poigraph/errors.hpp"
#include "poigraph/io.hpp"
#include "poigraph/model.hpp"

namespace poigraph {

inline constexpr std::string_view kCheckpointMagic = "PGCKPT1";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t vocab_hash = 0;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string variant = "full";
  std::vector<int> fanouts;
  std::vector<int> edge_columns;  // indices into the 48-wide edge vector
  double best_val_mae = 0.0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelParameters params;
  CheckpointMeta meta;
  std::optional<nn::AdamWState> optimizer;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || p != s.data() + s.size()) throw CheckpointError("bad hex value '" + s + "'");
  return v;
}

inline nlohmann::ordered_json dims_to_json(const ModelDims& d) {
  return {{"vocab_rows", d.vocab_rows}, {"embed_dim", d.embed_dim},   {"use_popularity", d.use_popularity},
          {"identity_width", d.identity_width}, {"hidden", d.hidden}, {"depth", d.depth},
          {"node_proj", d.node_proj}, {"edge_in", d.edge_in},         {"edge_proj", d.edge_proj},
          {"dropout", d.dropout}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  j.at("vocab_rows").get_to(d.vocab_rows);
  j.at("embed_dim").get_to(d.embed_dim);
  j.at("use_popularity").get_to(d.use_popularity);
  j.at("identity_width").get_to(d.identity_width);
  j.at("hidden").get_to(d.hidden);
  j.at("depth").get_to(d.depth);
  j.at("node_proj").get_to(d.node_proj);
  j.at("edge_in").get_to(d.edge_in);
  j.at("edge_proj").get_to(d.edge_proj);
  j.at("dropout").get_to(d.dropout);
  return d;
}

namespace detail {

inline void put_f32(io::BinaryWriter& w, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) w.put<float>(static_cast<float>(m.data()[i]));
}

inline void get_f32(io::BinaryReader& r, Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = r.get<float>();
    if (!std::isfinite(f)) throw CheckpointError("non-finite value in checkpoint tensor");
    m.data()[i] = static_cast<double>(f);
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const ModelParameters& params, const CheckpointMeta& meta,
                                        const nn::AdamWState* optimizer = nullptr) {
  nlohmann::ordered_json j;
  j["dims"] = dims_to_json(params.dims);
  j["embed_frozen"] = params.embed_frozen;
  j["vocab_hash"] = hex64(meta.vocab_hash);
  j["seed"] = meta.seed;
  j["epoch"] = meta.epoch;
  j["variant"] = meta.variant;
  j["fanouts"] = meta.fanouts;
  j["edge_columns"] = meta.edge_columns;
  j["best_val_mae"] = meta.best_val_mae;
  j["parameter_count"] = params.parameter_count();
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  const auto names = params.tensor_names();
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i)
    tensors.push_back({{"name", names[i]}, {"rows", ts[i]->rows()}, {"cols", ts[i]->cols()}});
  j["tensors"] = tensors;
  const std::string text = j.dump();

  io::BinaryWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  for (const Matrix* m : ts) detail::put_f32(w, *m);
  w.put<std::uint8_t>(optimizer ? 1 : 0);
  if (optimizer) {
    const auto& c = optimizer->config;
    w.put<std::uint64_t>(optimizer->step);
    for (double v : {c.lr, c.beta1, c.beta2, c.eps, c.weight_decay}) w.put<double>(v);
    for (const Matrix& m : optimizer->m) detail::put_f32(w, m);
    for (const Matrix& m : optimizer->v) detail::put_f32(w, m);
  }
  return w.bytes();
}

/// Parses a checkpoint. With `expected_vocab_hash` set, a file built over a
/// different NAICS vocabulary is rejected.
inline Checkpoint deserialize_checkpoint(io::BinaryReader r, std::optional<std::uint64_t> expected_vocab_hash = {}) {
  try {
    if (r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw CheckpointError("not a checkpoint (bad magic)");
    const auto version = r.get<std::uint16_t>();
    if (version != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto meta_len = r.get<std::uint32_t>();
    const nlohmann::json j = nlohmann::json::parse(r.get_bytes(meta_len));

    Checkpoint ck;
    ck.meta.vocab_hash = parse_hex64(j.at("vocab_hash").get<std::string>());
    if (expected_vocab_hash && *expected_vocab_hash != ck.meta.vocab_hash)
      throw CheckpointError("checkpoint vocabulary hash " + hex64(ck.meta.vocab_hash) + " does not match data (" +
                            hex64(*expected_vocab_hash) + ")");
    j.at("seed").get_to(ck.meta.seed);
    j.at("epoch").get_to(ck.meta.epoch);
    j.at("variant").get_to(ck.meta.variant);
    j.at("fanouts").get_to(ck.meta.fanouts);
    j.at("edge_columns").get_to(ck.meta.edge_columns);
    j.at("best_val_mae").get_to(ck.meta.best_val_mae);

    const ModelDims dims = dims_from_json(j.at("dims"));
    ck.params = ModelParameters::zeros(dims);
    j.at("embed_frozen").get_to(ck.params.embed_frozen);
    if (j.at("parameter_count").get<std::size_t>() != expected_parameter_count(dims) ||
        ck.params.parameter_count() != expected_parameter_count(dims))
      throw CheckpointError("checkpoint parameter count does not match its dimensions");
    if (static_cast<int>(ck.meta.edge_columns.size()) != dims.edge_in)
      throw CheckpointError("checkpoint edge columns do not match edge input width");
    const auto& listed = j.at("tensors");
    auto ts = ck.params.tensors();
    if (listed.size() != ts.size()) throw CheckpointError("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (listed[i].at("rows").get<Eigen::Index>() != ts[i]->rows() ||
          listed[i].at("cols").get<Eigen::Index>() != ts[i]->cols())
        throw CheckpointError("checkpoint tensor " + listed[i].at("name").get<std::string>() +
                              " has unexpected shape");
      detail::get_f32(r, *ts[i]);
    }
    if (r.get<std::uint8_t>() == 1) {
      nn::AdamWState opt(nn::AdamWConfig{}, std::as_const(ck.params).tensors());
      opt.step = r.get<std::uint64_t>();
      auto& c = opt.config;
      for (double* v : {&c.lr, &c.beta1, &c.beta2, &c.eps, &c.weight_decay}) *v = r.get<double>();
      for (Matrix& m : opt.m) detail::get_f32(r, m);
      for (Matrix& m : opt.v) detail::get_f32(r, m);
      ck.optimizer = std::move(opt);
    }
    if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  } catch (const FormatError& e) {
    throw CheckpointError(std::string("truncated checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint dimensions: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                            const CheckpointMeta& meta, const nn::AdamWState* optimizer = nullptr) {
  io::write_text(path, serialize_checkpoint(params, meta, optimizer));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_vocab_hash = {}) {
  return deserialize_checkpoint(io::BinaryReader::open(path), expected_vocab_hash);
}

}  // namespace poigraph
