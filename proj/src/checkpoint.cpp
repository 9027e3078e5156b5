// SPDX-License-Identifier: Apache-2.0
#include "labes/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace labes {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'L', 'A', 'B', 'E', 'S', 'C', 'K', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_mat(std::ostream& out, const Mat& m) {
  // column-major, matching Eigen's default layout
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Mat read_mat(std::istream& in, long rows, long cols) {
  Mat m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const LabesModel& model,
                     const TrainStateBlob* train_state,
                     const GradBuffer* adam_m, const GradBuffer* adam_v) {
  const ParameterSet& ps = model.params();
  if ((adam_m == nullptr) != (adam_v == nullptr)) {
    throw ConfigError("save_checkpoint: both Adam moments or neither");
  }

  json meta;
  meta["config"] = json::parse(model.config().to_json_text());
  meta["schema"] = json::parse(model.schema().to_json_text());
  meta["vocab"] = json::parse(model.vocab().to_json_text());
  if (train_state) {
    json ts;
    ts["epoch"] = train_state->epoch;
    ts["phase"] = train_state->phase;
    ts["lr"] = train_state->lr;
    ts["best_dev"] = train_state->best_dev;
    ts["best_epoch"] = train_state->best_epoch;
    ts["bad_epochs"] = train_state->bad_epochs;
    ts["adam_step"] = train_state->adam_step;
    ts["rng_state"] = train_state->rng_state;
    meta["train_state"] = ts;
  }
  meta["has_adam"] = adam_m != nullptr;
  json dir = json::array();
  for (int i = 0; i < ps.count(); ++i) {
    dir.push_back({{"name", ps.name(i)},
                   {"rows", ps.value(i).rows()},
                   {"cols", ps.value(i).cols()}});
  }
  meta["arrays"] = dir;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::string meta_text = meta.dump();
  write_u64(out, meta_text.size());
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  for (int i = 0; i < ps.count(); ++i) write_mat(out, ps.value(i));
  if (adam_m) {
    for (int i = 0; i < ps.count(); ++i) write_mat(out, (*adam_m)[i]);
    for (int i = 0; i < ps.count(); ++i) write_mat(out, (*adam_v)[i]);
  }
  if (!out) throw DataError("short write saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const std::uint64_t meta_len = read_u64(in);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw DataError("truncated checkpoint metadata: " + path);
  json meta = json::parse(meta_text);

  LoadedCheckpoint ck;
  ck.config = ModelConfig::from_json_text(meta.at("config").dump());
  ck.schema = Schema::from_json_text(meta.at("schema").dump());
  ck.vocab = Vocabulary::from_json_text(meta.at("vocab").dump(), ck.schema);
  if (meta.contains("train_state")) {
    const json& ts = meta["train_state"];
    TrainStateBlob blob;
    blob.epoch = ts.at("epoch").get<int>();
    blob.phase = ts.at("phase").get<std::string>();
    blob.lr = ts.at("lr").get<double>();
    blob.best_dev = ts.at("best_dev").get<double>();
    blob.best_epoch = ts.at("best_epoch").get<int>();
    blob.bad_epochs = ts.at("bad_epochs").get<int>();
    blob.adam_step = ts.at("adam_step").get<long>();
    blob.rng_state = ts.at("rng_state").get<std::string>();
    ck.train_state = blob;
  }
  for (const json& e : meta.at("arrays")) {
    ParameterSet::Entry entry;
    entry.name = e.at("name").get<std::string>();
    entry.value = read_mat(in, e.at("rows").get<long>(),
                           e.at("cols").get<long>());
    ck.arrays.push_back(std::move(entry));
  }
  ck.has_adam = meta.value("has_adam", false);
  if (ck.has_adam) {
    for (const json& e : meta.at("arrays")) {
      ck.adam_m.push_back(read_mat(in, e.at("rows").get<long>(),
                                   e.at("cols").get<long>()));
    }
    for (const json& e : meta.at("arrays")) {
      ck.adam_v.push_back(read_mat(in, e.at("rows").get<long>(),
                                   e.at("cols").get<long>()));
    }
  }
  if (!in) throw DataError("truncated checkpoint arrays: " + path);
  return ck;
}

LabesModel model_from_checkpoint(const LoadedCheckpoint& ck) {
  LabesModel model(ck.config, ck.schema, ck.vocab);
  ParameterSet& ps = model.params();
  if (static_cast<int>(ck.arrays.size()) != ps.count()) {
    throw DataError("checkpoint parameter count mismatch");
  }
  for (const auto& e : ck.arrays) {
    const int idx = ps.require(e.name);
    Mat& dst = ps.value(idx);
    if (dst.rows() != e.value.rows() || dst.cols() != e.value.cols()) {
      throw DataError("checkpoint shape mismatch for " + e.name);
    }
    dst = e.value;
  }
  return model;
}

}  // namespace labes
