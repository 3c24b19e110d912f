#include "mrgnn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mrgnn/common.hpp"

namespace mrgnn {

static_assert(std::endian::native == std::endian::little, "archive format assumes little-endian host");

namespace {

constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buffer_.append(c, n);
  }
  template <typename T>
  void pod(T value) {
    bytes(&value, sizeof(T));
  }
  const std::string& data() const { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t limit) : data_(data), limit_(limit) {}

  void bytes(void* out, std::size_t n) {
    if (n > limit_ - pos_) throw FormatError("archive truncated");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T value{};
    bytes(&value, sizeof(T));
    return value;
  }
  std::string string(std::size_t n) {
    if (n > limit_ - pos_) throw FormatError("archive truncated");
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t position() const { return pos_; }

 private:
  const std::string& data_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

const Eigen::MatrixXd& Archive::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw FormatError("archive is missing array '" + name + "'");
  return it->second;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t digest(const Eigen::MatrixXd& m, std::uint64_t seed) {
  std::uint64_t shape[2] = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  std::uint64_t h = fnv1a(shape, sizeof(shape), seed);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      h = fnv1a(&v, sizeof(v), h);
    }
  }
  return h;
}

std::string hex_digest(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << value;
  return os.str();
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  if (archive.magic.size() != 8) throw std::invalid_argument("archive magic must be 8 bytes");
  Writer w;
  w.bytes(archive.magic.data(), 8);
  w.pod<std::uint32_t>(archive.version);
  const std::string manifest = archive.manifest.dump();
  w.pod<std::uint64_t>(manifest.size());
  w.bytes(manifest.data(), manifest.size());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(archive.arrays.size()));
  for (const auto& [name, m] : archive.arrays) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.pod<double>(m(r, c));
    }
  }
  const std::uint64_t checksum = fnv1a(w.data().data(), w.data().size());
  w.pod<std::uint64_t>(checksum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path, std::string_view expected_magic,
                     std::uint32_t expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in '" + path.string() + "'";

  if (data.size() < 8 + 4 + 8 + 4 + 8) throw FormatError("archive truncated" + where);
  const std::size_t body = data.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + body, sizeof(stored));

  Reader r(data, body);
  Archive a;
  a.magic = r.string(8);
  if (a.magic != expected_magic) throw FormatError("unrecognized archive type" + where);
  a.version = r.pod<std::uint32_t>();
  if (a.version != expected_version) {
    throw FormatError("archive version " + std::to_string(a.version) + " not supported (expected " +
                      std::to_string(expected_version) + ")" + where);
  }
  if (fnv1a(data.data(), body) != stored) throw FormatError("archive checksum mismatch (truncated or corrupt)" + where);

  try {
    const auto manifest_len = r.pod<std::uint64_t>();
    a.manifest = nlohmann::json::parse(r.string(manifest_len));
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto name_len = r.pod<std::uint32_t>();
      std::string name = r.string(name_len);
      const auto rows = r.pod<std::uint64_t>();
      const auto cols = r.pod<std::uint64_t>();
      if (cols != 0 && rows > (body - r.position()) / sizeof(double) / cols) throw FormatError("archive truncated");
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index rr = 0; rr < m.rows(); ++rr) {
        for (Eigen::Index cc = 0; cc < m.cols(); ++cc) m(rr, cc) = r.pod<double>();
      }
      a.arrays.emplace(std::move(name), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("archive manifest unreadable: ") + e.what() + where);
  } catch (const FormatError& e) {
    throw FormatError(e.what() + where);
  }
  if (r.position() != body) throw FormatError("trailing bytes in archive" + where);
  return a;
}

}  // namespace mrgnn
