#include "mtdbn/serialization.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mtdbn {

namespace {

constexpr char kRbmMagic[] = "MTDBN1";
constexpr char kNetMagic[] = "MTDBN1-NET";
constexpr std::uint32_t kNetVersion = 1;

void put_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& is, void* data, std::size_t n) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!is) throw DataError("unexpected end of file");
}

void put_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

std::uint8_t get_u8(std::istream& is) {
  std::uint8_t v = 0;
  get_bytes(is, &v, 1);
  return v;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  get_bytes(is, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  get_bytes(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}

double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_u64(is));
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw DataError("string length is implausibly large");
  std::string s(n, '\0');
  if (n > 0) get_bytes(is, s.data(), n);
  return s;
}

std::uint8_t unit_type_tag(UnitType t) {
  switch (t) {
    case UnitType::kBinary: return 0;
    case UnitType::kReal: return 1;
    case UnitType::kCount: return 2;
  }
  return 0;
}

UnitType unit_type_from_tag(std::uint8_t tag) {
  switch (tag) {
    case 0: return UnitType::kBinary;
    case 1: return UnitType::kReal;
    case 2: return UnitType::kCount;
  }
  throw DataError("unknown unit-type tag in file");
}

void put_matrix(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(os, m(r, c));
  }
}

Matrix get_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_f64(is);
  }
  return m;
}

void put_vector(std::ostream& os, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(os, v(i));
}

Vector get_vector(std::istream& is, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = get_f64(is);
  return v;
}

constexpr std::uint64_t kMaxDim = 1ull << 32;

}  // namespace

void write_rbm(std::ostream& os, const RbmParams& params) {
  params.check_consistent();
  put_bytes(os, kRbmMagic, 6);
  put_u8(os, unit_type_tag(params.unit_type));
  put_u64(os, static_cast<std::uint64_t>(params.W.rows()));
  put_u64(os, static_cast<std::uint64_t>(params.W.cols()));
  put_matrix(os, params.W);
  put_vector(os, params.a);
  put_vector(os, params.b);
}

RbmParams read_rbm(std::istream& is) {
  char magic[6];
  get_bytes(is, magic, 6);
  if (std::memcmp(magic, kRbmMagic, 6) != 0) {
    throw DataError("bad magic: not an RBM parameter file");
  }
  RbmParams params;
  params.unit_type = unit_type_from_tag(get_u8(is));
  const std::uint64_t n = get_u64(is);
  const std::uint64_t k = get_u64(is);
  if (n == 0 || k == 0 || n > kMaxDim || k > kMaxDim) {
    throw DataError("implausible RBM dimensions in file");
  }
  params.W = get_matrix(is, static_cast<Eigen::Index>(n),
                        static_cast<Eigen::Index>(k));
  params.a = get_vector(is, static_cast<Eigen::Index>(n));
  params.b = get_vector(is, static_cast<Eigen::Index>(k));
  if (!params.all_finite()) {
    throw DataError("non-finite parameter in RBM file");
  }
  return params;
}

void save_rbm(const std::string& path, const RbmParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_rbm(os, params);
  if (!os) throw DataError("write failed for '" + path + "'");
}

RbmParams load_rbm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_rbm(is);
}

void save_net(const std::string& path, const DeepNet& net) {
  net.check_consistent();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  put_bytes(os, kNetMagic, 10);
  put_u32(os, kNetVersion);
  put_u32(os, static_cast<std::uint32_t>(net.views.size()));
  for (std::size_t s = 0; s < net.views.size(); ++s) {
    const auto& spec = net.views[s];
    put_string(os, spec.name);
    put_u8(os, unit_type_tag(spec.unit_type));
    put_u64(os, static_cast<std::uint64_t>(spec.dim));
    put_u64(os, static_cast<std::uint64_t>(spec.hidden));
    write_rbm(os, net.view_params[s]);
  }
  write_rbm(os, net.joint);
  put_u32(os, static_cast<std::uint32_t>(net.heads.size()));
  for (const auto& head : net.heads) {
    put_u8(os, static_cast<std::uint8_t>(head.kind));
    put_string(os, head.name);
    put_u32(os, static_cast<std::uint32_t>(head.label_names.size()));
    for (const auto& label : head.label_names) put_string(os, label);
    put_u64(os, static_cast<std::uint64_t>(head.V.rows()));
    put_u64(os, static_cast<std::uint64_t>(head.V.cols()));
    put_matrix(os, head.V);
    put_vector(os, head.bias);
    put_f64(os, head.task_weight);
    put_u8(os, head.threshold.has_value() ? 1 : 0);
    if (head.threshold.has_value()) put_f64(os, *head.threshold);
  }
  if (!os) throw DataError("write failed for '" + path + "'");
}

DeepNet load_net(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  char magic[10];
  get_bytes(is, magic, 10);
  if (std::memcmp(magic, kNetMagic, 10) != 0) {
    throw DataError("bad magic: not a net container file");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kNetVersion) {
    std::ostringstream msg;
    msg << "unsupported net container version " << version;
    throw DataError(msg.str());
  }
  DeepNet net;
  const std::uint32_t num_views = get_u32(is);
  for (std::uint32_t s = 0; s < num_views; ++s) {
    ViewSpec spec;
    spec.name = get_string(is);
    spec.unit_type = unit_type_from_tag(get_u8(is));
    spec.dim = static_cast<int>(get_u64(is));
    spec.hidden = static_cast<int>(get_u64(is));
    net.views.push_back(std::move(spec));
    net.view_params.push_back(read_rbm(is));
  }
  net.joint = read_rbm(is);
  const std::uint32_t num_heads = get_u32(is);
  for (std::uint32_t h = 0; h < num_heads; ++h) {
    TaskHead head;
    const std::uint8_t kind_tag = get_u8(is);
    if (kind_tag > static_cast<std::uint8_t>(HeadKind::kMultilabel)) {
      throw DataError("unknown head-kind tag in file");
    }
    head.kind = static_cast<HeadKind>(kind_tag);
    head.name = get_string(is);
    const std::uint32_t num_labels = get_u32(is);
    for (std::uint32_t l = 0; l < num_labels; ++l) {
      head.label_names.push_back(get_string(is));
    }
    const std::uint64_t rows = get_u64(is);
    const std::uint64_t cols = get_u64(is);
    if (rows > kMaxDim || cols > kMaxDim) {
      throw DataError("implausible head dimensions in file");
    }
    head.V = get_matrix(is, static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
    head.bias = get_vector(is, static_cast<Eigen::Index>(rows));
    head.task_weight = get_f64(is);
    if (get_u8(is) != 0) head.threshold = get_f64(is);
    net.heads.push_back(std::move(head));
  }
  net.check_consistent();
  return net;
}

void write_matrix_csv(const std::string& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  char buf[64];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      if (c > 0) os << ',';
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw DataError("write failed for '" + path + "'");
}

Matrix read_matrix_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string cell = line.substr(pos, comma - pos);
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        std::ostringstream msg;
        msg << "'" << path << "' row " << line_no << ": cannot parse '"
            << cell << "' as a number";
        throw DataError(msg.str());
      }
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      std::ostringstream msg;
      msg << "'" << path << "' row " << line_no << ": ragged row width";
      throw DataError(msg.str());
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

}  // namespace mtdbn
