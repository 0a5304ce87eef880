#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "knnkb/error.hpp"
#include "knnkb/store.hpp"

// Binary layouts. All integers little-endian, floats IEEE-754 binary32.
//
// Feature file (version 1):
//   "KNNF" | u32 version | u8 dtype (0 = f32) | u32 dimension | u64 record_count
//   | u32 vocab_count | vocab_count x (u32 byte length, UTF-8 name)
//   | record_count x record
//   record: u16 label_count | label_count x u32 label id | u32 source length, bytes
//           | u8 has_task | u32 task id (0 when has_task = 0) | dimension x f32 raw values
//
// Store snapshot (version 1):
//   "KNNS" | u32 version | u32 dimension | u64 live_count | u64 total_count | u64 next_id
//   | u32 vocab_count | vocab_count x (u32 byte length, UTF-8 name)
//   | total_count x record | u64 FNV-1a 64 of every preceding byte
//   record: u64 id | u8 deleted | u64 ref_count | u8 has_task | u32 task id
//           | u32 source length, bytes | f32 original_norm | u16 label_count
//           | label_count x u32 label id | dimension x f32 unit vector
namespace knnkb {

inline constexpr std::array<char, 4> kFeatureMagic{'K', 'N', 'N', 'F'};
inline constexpr std::array<char, 4> kSnapshotMagic{'K', 'N', 'N', 'S'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kSnapshotVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;

/// One record as it appears in a feature file: the raw encoder output.
struct FeatureFileRecord {
  std::vector<float> raw;
  std::vector<std::string> labels;  // may be empty only for unlabeled queries
  std::string source;
  std::optional<TaskId> task_id;
  friend bool operator==(const FeatureFileRecord&, const FeatureFileRecord&) = default;
};

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  void bytes(std::span<const char> data) { out_.insert(out_.end(), data.begin(), data.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void str(std::string_view s) {
    if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
      fail(ErrorCode::kInvalidArgument, "string too long to encode");
    }
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t>& buffer() noexcept { return out_; }

 private:
  template <class T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  std::span<const std::uint8_t> take(std::size_t n, std::string_view what) {
    if (remaining() < n) {
      fail(ErrorCode::kParseError, "truncated input at offset " + std::to_string(pos_) +
                                       " reading " + std::string(what));
    }
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8(std::string_view what) { return take(1, what)[0]; }
  std::uint16_t u16(std::string_view what) { return get_le<std::uint16_t>(what); }
  std::uint32_t u32(std::string_view what) { return get_le<std::uint32_t>(what); }
  std::uint64_t u64(std::string_view what) { return get_le<std::uint64_t>(what); }
  float f32(std::string_view what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::string_view what) {
    const auto n = u32(what);
    auto b = take(n, what);
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }

 private:
  template <class T>
  T get_le(std::string_view what) {
    auto b = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{b[i]} << (8 * i));
    return v;
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

[[noreturn]] inline void parse_fail(std::size_t offset, const std::string& what) {
  fail(ErrorCode::kParseError, "at offset " + std::to_string(offset) + ": " + what);
}

inline void expect_magic(ByteReader& in, const std::array<char, 4>& magic) {
  auto got = in.take(4, "magic");
  if (std::memcmp(got.data(), magic.data(), 4) != 0) {
    parse_fail(0, "bad magic, expected '" + std::string(magic.begin(), magic.end()) + "'");
  }
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIoError, "read failed for '" + path.string() + "'");
  return data;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "write failed for '" + path.string() + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature files

inline std::vector<std::uint8_t> encode_feature_file(std::span<const FeatureFileRecord> records,
                                                     std::size_t dimension = 0) {
  if (dimension == 0) {
    if (records.empty()) fail(ErrorCode::kInvalidArgument, "dimension unknown for empty file");
    dimension = records.front().raw.size();
  }
  if (dimension == 0 || dimension > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::kInvalidArgument, "dimension must be in [1, 2^32)");
  }
  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::uint32_t> index;
  for (const auto& r : records) {
    if (r.raw.size() != dimension) {
      fail(ErrorCode::kInvalidArgument, "mixed dimensions in feature records");
    }
    if (r.labels.empty()) fail(ErrorCode::kInvalidArgument, "record '" + r.source + "' has no labels");
    if (r.labels.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorCode::kInvalidArgument, "too many labels on one record");
    }
    for (const auto& l : r.labels) {
      if (index.emplace(l, static_cast<std::uint32_t>(vocab.size())).second) vocab.push_back(l);
    }
  }

  detail::ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u8(kDtypeFloat32);
  w.u32(static_cast<std::uint32_t>(dimension));
  w.u64(records.size());
  w.u32(static_cast<std::uint32_t>(vocab.size()));
  for (const auto& name : vocab) w.str(name);
  for (const auto& r : records) {
    w.u16(static_cast<std::uint16_t>(r.labels.size()));
    for (const auto& l : r.labels) w.u32(index.at(l));
    w.str(r.source);
    w.u8(r.task_id ? 1 : 0);
    w.u32(r.task_id.value_or(0));
    for (float v : r.raw) w.f32(v);
  }
  return std::move(w.buffer());
}

inline std::vector<FeatureFileRecord> decode_feature_file(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  detail::expect_magic(in, kFeatureMagic);
  const auto version = in.u32("version");
  if (version != kFeatureVersion) {
    fail(ErrorCode::kUnknownVersion, "unsupported feature file version " + std::to_string(version));
  }
  const auto dtype = in.u8("dtype");
  if (dtype != kDtypeFloat32) {
    fail(ErrorCode::kUnknownVersion, "unsupported dtype code " + std::to_string(dtype));
  }
  const auto dim_at = in.offset();
  const auto dimension = in.u32("dimension");
  if (dimension == 0) detail::parse_fail(dim_at, "dimension must be >= 1");
  const auto count = in.u64("record_count");
  const auto vocab_count = in.u32("vocab_count");
  std::vector<std::string> vocab;
  vocab.reserve(std::min<std::size_t>(vocab_count, in.remaining() / 4));
  for (std::uint32_t i = 0; i < vocab_count; ++i) vocab.push_back(in.str("vocabulary entry"));

  std::vector<FeatureFileRecord> out;
  out.reserve(std::min<std::size_t>(count, in.remaining() / (std::size_t{4} * dimension)));
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureFileRecord r;
    const auto label_count = in.u16("label count");
    for (std::uint16_t l = 0; l < label_count; ++l) {
      const auto at = in.offset();
      const auto id = in.u32("label id");
      if (id >= vocab.size()) detail::parse_fail(at, "label id out of range");
      r.labels.push_back(vocab[id]);
    }
    r.source = in.str("source");
    const auto has_task = in.u8("task flag");
    const auto task = in.u32("task id");
    if (has_task > 1) detail::parse_fail(in.offset() - 5, "bad task flag");
    if (has_task) r.task_id = task;
    r.raw.resize(dimension);
    for (auto& v : r.raw) v = in.f32("vector");
    out.push_back(std::move(r));
  }
  if (in.remaining() != 0) detail::parse_fail(in.offset(), "trailing bytes after last record");
  return out;
}

inline std::size_t write_feature_file(std::span<const FeatureFileRecord> records,
                                      const std::filesystem::path& path,
                                      std::size_t dimension = 0) {
  auto bytes = encode_feature_file(records, dimension);
  detail::write_file(path, bytes);
  return bytes.size();
}

inline std::vector<FeatureFileRecord> read_feature_file(const std::filesystem::path& path) {
  return decode_feature_file(detail::read_file(path));
}

/// Plain-text records, one per line:
///   `<label>[,<label>...] <source> <v1> <v2> ...`
/// Blank lines and lines starting with '#' are skipped. The label field "_"
/// marks an unlabeled query and is accepted only when `allow_unlabeled`.
inline std::vector<FeatureFileRecord> parse_text_features(std::istream& in,
                                                          bool allow_unlabeled = false) {
  std::vector<FeatureFileRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dimension = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string labels, source;
    fields >> labels >> source;
    auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
    if (source.empty()) fail(ErrorCode::kParseError, where() + "expected labels and source");
    FeatureFileRecord r;
    r.source = source;
    if (labels == "_") {
      if (!allow_unlabeled) fail(ErrorCode::kParseError, where() + "record has no labels");
    } else {
      std::istringstream parts(labels);
      std::string part;
      while (std::getline(parts, part, ',')) {
        if (part.empty()) fail(ErrorCode::kParseError, where() + "empty label name");
        r.labels.push_back(part);
      }
    }
    std::string token;
    while (fields >> token) {
      try {
        std::size_t used = 0;
        r.raw.push_back(std::stof(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        fail(ErrorCode::kParseError, where() + "bad float '" + token + "'");
      }
    }
    if (r.raw.empty()) fail(ErrorCode::kParseError, where() + "record has no values");
    if (dimension == 0) dimension = r.raw.size();
    if (r.raw.size() != dimension) fail(ErrorCode::kParseError, where() + "dimension mismatch");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<FeatureFileRecord> read_text_features(const std::filesystem::path& path,
                                                         bool allow_unlabeled = false) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open '" + path.string() + "' for reading");
  return parse_text_features(in, allow_unlabeled);
}

/// Reads either format, dispatching on the binary magic.
inline std::vector<FeatureFileRecord> read_features_any(const std::filesystem::path& path,
                                                        bool allow_unlabeled = false) {
  auto bytes = detail::read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kFeatureMagic.data(), 4) == 0) {
    return decode_feature_file(bytes);
  }
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  return parse_text_features(in, allow_unlabeled);
}

/// Ingests records in file order. `task_override` replaces every record's task id.
inline std::vector<RecordId> ingest_records(KnowledgeStore& store,
                                            std::span<const FeatureFileRecord> records,
                                            std::optional<TaskId> task_override = std::nullopt) {
  for (const auto& r : records) {
    if (r.raw.size() != store.dimension()) {
      fail(ErrorCode::kInvalidArgument, "feature dimension " + std::to_string(r.raw.size()) +
                                            " does not match store " +
                                            std::to_string(store.dimension()));
    }
  }
  std::vector<RecordId> ids;
  ids.reserve(records.size());
  for (const auto& r : records) {
    ids.push_back(store.ingest(r.raw, r.labels, r.source, task_override ? task_override : r.task_id));
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Store snapshots

inline std::vector<std::uint8_t> encode_snapshot(const KnowledgeStore& store) {
  const auto state = store.export_state();
  std::size_t live = 0;
  for (const auto& r : state.records) live += r.deleted ? 0 : 1;

  detail::ByteWriter w;
  w.bytes(kSnapshotMagic);
  w.u32(kSnapshotVersion);
  w.u32(static_cast<std::uint32_t>(state.dimension));
  w.u64(live);
  w.u64(state.records.size());
  w.u64(state.next_id);
  w.u32(static_cast<std::uint32_t>(state.vocabulary.size()));
  for (const auto& name : state.vocabulary) w.str(name);
  for (const auto& r : state.records) {
    w.u64(r.id);
    w.u8(r.deleted ? 1 : 0);
    w.u64(r.ref_count);
    w.u8(r.task_id ? 1 : 0);
    w.u32(r.task_id.value_or(0));
    w.str(r.source);
    w.f32(r.original_norm);
    w.u16(static_cast<std::uint16_t>(r.labels.size()));
    for (auto l : r.labels) w.u32(l);
    for (float v : r.vector) w.f32(v);
  }
  const auto sum = fnv1a64(w.buffer());
  w.u64(sum);
  return std::move(w.buffer());
}

inline KnowledgeStore decode_snapshot(std::span<const std::uint8_t> bytes) {
  {
    detail::ByteReader probe(bytes);
    detail::expect_magic(probe, kSnapshotMagic);
    const auto version = probe.u32("version");
    if (version != kSnapshotVersion) {
      fail(ErrorCode::kUnknownVersion, "unsupported snapshot version " + std::to_string(version));
    }
  }
  if (bytes.size() < 8 + 8) fail(ErrorCode::kCorruption, "snapshot too short");
  const auto body = bytes.first(bytes.size() - 8);
  detail::ByteReader tail(bytes.last(8));
  if (fnv1a64(body) != tail.u64("checksum")) {
    fail(ErrorCode::kCorruption, "snapshot checksum mismatch");
  }

  // Past the checksum any structural problem is still reported as corruption.
  try {
    detail::ByteReader in(body);
    in.take(8, "header");
    StoreState state;
    state.dimension = in.u32("dimension");
    const auto live = in.u64("live_count");
    const auto total = in.u64("total_count");
    state.next_id = in.u64("next_id");
    const auto vocab_count = in.u32("vocab_count");
    for (std::uint32_t i = 0; i < vocab_count; ++i) state.vocabulary.push_back(in.str("vocabulary"));
    if (state.dimension == 0) fail(ErrorCode::kCorruption, "snapshot dimension is zero");
    std::size_t live_seen = 0;
    for (std::uint64_t i = 0; i < total; ++i) {
      FeatureRecord r;
      r.id = in.u64("id");
      const auto deleted = in.u8("deleted");
      if (deleted > 1) fail(ErrorCode::kCorruption, "bad tombstone flag");
      r.deleted = deleted == 1;
      r.ref_count = in.u64("ref_count");
      const auto has_task = in.u8("task flag");
      const auto task = in.u32("task id");
      if (has_task > 1) fail(ErrorCode::kCorruption, "bad task flag");
      if (has_task) r.task_id = task;
      r.source = in.str("source");
      r.original_norm = in.f32("original_norm");
      const auto labels = in.u16("label count");
      for (std::uint16_t l = 0; l < labels; ++l) r.labels.push_back(in.u32("label id"));
      r.vector.resize(state.dimension);
      for (auto& v : r.vector) v = in.f32("vector");
      live_seen += r.deleted ? 0 : 1;
      state.records.push_back(std::move(r));
    }
    if (in.remaining() != 0) fail(ErrorCode::kCorruption, "trailing bytes in snapshot");
    if (live_seen != live) fail(ErrorCode::kCorruption, "live count does not match records");
    return KnowledgeStore::from_state(std::move(state));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCorruption) throw;
    fail(ErrorCode::kCorruption, e.what());
  }
}

inline std::size_t save_store(const KnowledgeStore& store, const std::filesystem::path& path) {
  auto bytes = encode_snapshot(store);
  // Written beside the target, then renamed over it.
  auto tmp = path;
  tmp += ".tmp";
  detail::write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot replace '" + path.string() + "': " + ec.message());
  return bytes.size();
}

inline KnowledgeStore load_store(const std::filesystem::path& path) {
  return decode_snapshot(detail::read_file(path));
}

}  // namespace knnkb
