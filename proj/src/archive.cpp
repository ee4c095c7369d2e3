#include "cenet/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace cenet {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'E', 'N', 'E', 'T', 'A', 'R', 'C'};
constexpr char kTrailer[8] = {'C', 'E', 'N', 'E', 'T', 'E', 'N', 'D'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  std::size_t size() const { return buf_.size(); }
  std::uint32_t crc_from(std::size_t begin) const {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf_.data() + begin), static_cast<uInt>(buf_.size() - begin)));
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}
  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw IntegrityError(source_ + ": truncated archive");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::uint32_t crc_range(std::size_t begin, std::size_t end) const {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data_.data() + begin), static_cast<uInt>(end - begin)));
  }
  const std::string& source() const { return source_; }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace

const ArchiveTensor* Archive::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Archive::strip_group(ParamGroup g) {
  const auto tag = static_cast<std::uint8_t>(g);
  tensors.erase(std::remove_if(tensors.begin(), tensors.end(), [tag](const ArchiveTensor& t) { return t.group == tag; }),
                tensors.end());
  if (header.contains("groups")) {
    Json kept = Json::array();
    for (const auto& n : header["groups"])
      if (n.get<std::string>() != group_name(g)) kept.push_back(n);
    header["groups"] = kept;
  }
}

std::set<ParamGroup> Archive::groups() const { return detail::header_groups(*this); }

void write_archive(const std::filesystem::path& path, const Archive& a) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kArchiveVersion);
  const std::string header = a.header.dump();
  w.pod<std::uint64_t>(header.size());
  const std::size_t header_begin = w.size();
  w.bytes(header.data(), header.size());
  w.pod<std::uint32_t>(w.crc_from(header_begin));
  w.pod<std::uint64_t>(a.tensors.size());
  for (const auto& t : a.tensors) {
    const std::size_t begin = w.size();
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.pod<std::uint8_t>(t.group);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.value.shape.size()));
    for (Index d : t.value.shape) w.pod<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.bytes(t.value.ptr(), sizeof(float) * static_cast<std::size_t>(t.value.size()));
    w.pod<std::uint32_t>(w.crc_from(begin));
  }
  w.bytes(kTrailer, sizeof(kTrailer));

  const std::filesystem::path target = std::filesystem::absolute(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    f.flush();
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + target.string() + ": " + ec.message());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open archive " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw IncompatibleError(path.string() + ": not a CENet archive");
  const auto version = r.pod<std::uint32_t>();
  if (version != kArchiveVersion)
    throw IncompatibleError(path.string() + ": archive format version " + std::to_string(version) +
                            ", this build reads version " + std::to_string(kArchiveVersion));
  const auto header_size = r.pod<std::uint64_t>();
  if (header_size > r.remaining()) throw IntegrityError(path.string() + ": truncated archive");
  const std::size_t header_begin = r.pos();
  std::string header(header_size, '\0');
  r.bytes(header.data(), header.size());
  const std::uint32_t header_crc = r.crc_range(header_begin, r.pos());
  if (r.pod<std::uint32_t>() != header_crc) throw IntegrityError(path.string() + ": header checksum mismatch");

  Archive a;
  try {
    a.header = Json::parse(header);
  } catch (const Json::parse_error&) {
    throw IntegrityError(path.string() + ": header is not valid JSON");
  }

  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::size_t begin = r.pos();
    ArchiveTensor t;
    const auto name_size = r.pod<std::uint32_t>();
    if (name_size > r.remaining()) throw IntegrityError(path.string() + ": truncated archive");
    t.name.assign(name_size, '\0');
    r.bytes(t.name.data(), name_size);
    t.group = r.pod<std::uint8_t>();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw IntegrityError(path.string() + ": corrupt tensor record " + t.name);
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.pod<std::uint64_t>();
      if (d > r.remaining()) throw IntegrityError(path.string() + ": corrupt tensor record " + t.name);
      shape.push_back(static_cast<Index>(d));
      n *= d;
    }
    if (n * sizeof(float) > r.remaining()) throw IntegrityError(path.string() + ": truncated tensor " + t.name);
    t.value = Tensor<float>(shape);
    r.bytes(t.value.ptr(), n * sizeof(float));
    const std::uint32_t crc = r.crc_range(begin, r.pos());
    if (r.pod<std::uint32_t>() != crc) throw IntegrityError(path.string() + ": checksum mismatch in tensor " + t.name);
    a.tensors.push_back(std::move(t));
  }
  char trailer[8];
  r.bytes(trailer, sizeof(trailer));
  if (std::memcmp(trailer, kTrailer, sizeof(trailer)) != 0) throw IntegrityError(path.string() + ": missing archive trailer");
  if (r.remaining() != 0) throw IntegrityError(path.string() + ": trailing bytes after archive end");
  return a;
}

}  // namespace cenet
