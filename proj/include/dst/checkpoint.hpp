// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container, little-endian throughout:
//
//   "DSTCKPT\0"                      8-byte magic
//   u32 format version
//   u64 header length, header bytes  JSON: model config, vocabularies, metadata
//   u32 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 dims[rank], f32 values
//   u32 CRC-32 of every preceding byte
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "dst/models.hpp"

namespace dst {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'T', 'C', 'K', 'P', 'T', '\0'};

struct CheckpointMeta {
  double dev_accuracy = 0.0;
  std::size_t epoch = 0;
  nlohmann::json train_config = nlohmann::json::object();
};

struct Checkpoint {
  std::unique_ptr<Tracker> model;
  CheckpointMeta meta;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (pos_ + n > size_) throw ChecksumError("checkpoint is truncated");
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace detail

inline nlohmann::json model_header(const Tracker& model, const CheckpointMeta& meta) {
  const auto& c = model.config();
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& sv : model.slots()) slots.push_back(sv.values());
  nlohmann::json triples = nlohmann::json::array();
  for (const auto& g : model.triples()) triples.push_back(g.values);
  std::vector<std::string> words(model.words().words().begin() + 1, model.words().words().end());
  return {{"model",
           {{"kind", to_string(c.kind)},
            {"embed_dim", c.embed_dim},
            {"hidden_dim", c.hidden_dim},
            {"dropout_keep", c.dropout_keep},
            {"seed", c.seed},
            {"role_encoding", {{"user", 0}, {"system", 1}}},
            {"db_columns", kDbColumnNames}}},
          {"vocab", {{"words", words}, {"slots", slots}, {"triples", triples}}},
          {"meta",
           {{"dev_accuracy", meta.dev_accuracy},
            {"epoch", meta.epoch},
            {"train_config", meta.train_config}}}};
}

inline std::vector<std::uint8_t> serialize_checkpoint(const Tracker& model, const CheckpointMeta& meta) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.uint(kCheckpointVersion);
  const std::string header = model_header(model, meta).dump();
  w.uint(static_cast<std::uint64_t>(header.size()));
  w.bytes(header.data(), header.size());
  const auto& params = model.params().all();
  w.uint(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.uint(static_cast<std::uint32_t>(p.value.shape.size()));
    for (std::size_t d : p.value.shape) w.uint(static_cast<std::uint64_t>(d));
    for (float v : p.value.data) w.f32(v);
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = detail::crc32_of(buf.data(), buf.size());
  w.uint(crc);
  return std::move(buf);
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  if (r.str(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw ParseError("not a tracker checkpoint (bad magic)");
  }
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < r.pos() + 4) throw ChecksumError("checkpoint is truncated");
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + body, 4);
  if (tail.uint<std::uint32_t>() != detail::crc32_of(bytes.data(), body)) {
    throw ChecksumError("checkpoint checksum mismatch (truncated or corrupted file)");
  }
  detail::ByteReader in(bytes.data(), body);
  in.str(sizeof(kCheckpointMagic));
  in.uint<std::uint32_t>();
  const auto header_len = in.uint<std::uint64_t>();
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in.str(static_cast<std::size_t>(header_len)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  try {
    const auto& m = h.at("model");
    ModelConfig cfg;
    cfg.kind = parse_model_kind(m.at("kind").get<std::string>());
    cfg.embed_dim = m.at("embed_dim").get<std::size_t>();
    cfg.hidden_dim = m.at("hidden_dim").get<std::size_t>();
    cfg.dropout_keep = m.at("dropout_keep").get<double>();
    cfg.seed = m.at("seed").get<std::uint64_t>();
    const auto& v = h.at("vocab");
    SlotVocabularies slots;
    for (std::size_t s = 0; s < kGoalSlots; ++s)
      slots[s] = SlotVocabulary(v.at("slots").at(s).get<std::vector<std::string>>());
    std::vector<GoalState> triples;
    for (const auto& t : v.at("triples")) {
      const auto vals = t.get<std::vector<std::string>>();
      if (vals.size() != kGoalSlots) throw ParseError("checkpoint: malformed triple");
      triples.emplace_back(vals[0], vals[1], vals[2]);
    }
    ck.model = std::make_unique<Tracker>(
        cfg, Vocabulary(v.at("words").get<std::vector<std::string>>()), slots, triples);
    const auto& meta = h.at("meta");
    ck.meta.dev_accuracy = meta.at("dev_accuracy").get<double>();
    ck.meta.epoch = meta.at("epoch").get<std::size_t>();
    ck.meta.train_config = meta.at("train_config");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }

  auto& params = ck.model->params();
  const auto count = in.uint<std::uint32_t>();
  if (count != params.all().size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                     std::to_string(params.all().size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = in.str(in.uint<std::uint32_t>());
    Parameter<float>* p = params.find(name);
    if (!p) throw ParseError("checkpoint tensor '" + name + "' is unknown to the model");
    Shape shape(in.uint<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(in.uint<std::uint64_t>());
    if (shape != p->value.shape) {
      throw ParseError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) +
                       ", model expects " + shape_string(p->value.shape));
    }
    for (float& x : p->value.data) x = in.f32();
  }
  if (in.pos() != body) throw ParseError("checkpoint has trailing bytes before the checksum");
  return ck;
}

inline void save_checkpoint(const Tracker& model, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_bytes(path));
}

}  // namespace dst
