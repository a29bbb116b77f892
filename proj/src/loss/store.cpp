#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lodl/common/io.hpp"
#include "lodl/loss/loss.hpp"

namespace lodl::loss {
namespace {

std::vector<double> gram_plus_floor(std::span<const double> l, std::size_t dim, std::size_t rank, double floor) {
  std::vector<double> a(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rank; ++r) s += l[i * rank + r] * l[j * rank + r];
      a[i * dim + j] = s;
    }
    a[i * dim + i] += floor;
  }
  return a;
}

}  // namespace

double min_eigenvalue_power(std::span<const double> sym, std::size_t n) {
  if (sym.size() != n * n || n == 0) throw std::invalid_argument("min_eigenvalue_power: expected a square matrix");
  // Gershgorin bound c >= lambda_max, so the dominant eigenvalue of cI - A is c - lambda_min.
  double c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(sym[i * n + j]);
    c = std::max(c, row);
  }
  std::vector<double> v(n), w(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
  double prev = 0.0;
  double rayleigh = 0.0;
  for (int it = 0; it < 20000; ++it) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return c;
    for (double& x : v) x /= norm;
    rayleigh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double av = 0.0;
      for (std::size_t j = 0; j < n; ++j) av += sym[i * n + j] * v[j];
      w[i] = c * v[i] - av;
      rayleigh += v[i] * w[i];
    }
    if (it > 10 && std::abs(rayleigh - prev) <= 1e-14 * std::max(1.0, std::abs(rayleigh))) break;
    prev = rayleigh;
    v.swap(w);
  }
  return c - rayleigh;
}

std::vector<double> psd_certificate(const LossParams& p) {
  switch (family_of(p)) {
    case Family::kWeightedMSE: {
      const auto& w = std::get<WeightedMSE>(p).w;
      return {*std::min_element(w.begin(), w.end())};
    }
    case Family::kDirectedWeightedMSE: {
      const auto& q = std::get<DirectedWeightedMSE>(p);
      return {*std::min_element(q.w_plus.begin(), q.w_plus.end()),
              *std::min_element(q.w_minus.begin(), q.w_minus.end())};
    }
    case Family::kQuadratic: {
      const auto& q = std::get<Quadratic>(p);
      return {min_eigenvalue_power(gram_plus_floor(q.l, q.dim, q.rank, q.w_min), q.dim)};
    }
    case Family::kDirectedQuadratic: {
      const auto& q = std::get<DirectedQuadratic>(p);
      return {min_eigenvalue_power(gram_plus_floor(q.l_plus, q.dim, q.rank, q.w_min), q.dim),
              min_eigenvalue_power(gram_plus_floor(q.l_minus, q.dim, q.rank, q.w_min), q.dim)};
    }
    case Family::kNN: break;
  }
  throw std::invalid_argument("psd_certificate: the network family has no curvature certificate");
}

namespace {

std::string join_sizes(std::span<const std::size_t> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

void append(std::vector<double>& out, std::span<const double> v) { out.insert(out.end(), v.begin(), v.end()); }

// Consumes n values from a flat list, failing on truncation.
class Reader {
 public:
  explicit Reader(std::vector<double> v) : v_(std::move(v)) {}
  std::vector<double> take(std::size_t n) {
    if (pos_ + n > v_.size()) throw FormatError("loss file: parameter list too short");
    std::vector<double> out(v_.begin() + static_cast<std::ptrdiff_t>(pos_),
                            v_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  double one() { return take(1)[0]; }
  void finish() const {
    if (pos_ != v_.size()) throw FormatError("loss file: trailing parameters");
  }

 private:
  std::vector<double> v_;
  std::size_t pos_ = 0;
};

}  // namespace

// One line per loss: id, family, objective, steps, comma-separated shape, then
// comma-separated parameters.
void write_losses(const std::filesystem::path& path, std::span<const FittedLoss> losses) {
  std::string text = "lodl-losses " + std::to_string(kLossFormatVersion) + "\n";
  for (const auto& f : losses) {
    std::vector<std::size_t> shape;
    std::vector<double> flat;
    std::visit(
        [&](const auto& q) {
          using T = std::decay_t<decltype(q)>;
          if constexpr (std::is_same_v<T, WeightedMSE>) {
            shape = {q.w.size()};
            flat = q.w;
          } else if constexpr (std::is_same_v<T, DirectedWeightedMSE>) {
            shape = {q.w_plus.size()};
            append(flat, q.w_plus);
            append(flat, q.w_minus);
          } else if constexpr (std::is_same_v<T, Quadratic>) {
            shape = {q.dim, q.rank};
            append(flat, q.l);
            flat.push_back(q.w_min);
          } else if constexpr (std::is_same_v<T, DirectedQuadratic>) {
            shape = {q.dim, q.rank};
            append(flat, q.l_plus);
            append(flat, q.l_minus);
            flat.push_back(q.w_min);
          } else {
            shape = q.widths;
            for (const auto& w : q.weights) append(flat, w);
            for (const auto& b : q.biases) append(flat, b);
            flat.push_back(q.input_scale);
            flat.push_back(q.output_scale);
          }
        },
        f.params);
    text += std::to_string(f.instance_id) + '\t' + std::string(family_name(family_of(f.params))) + '\t' +
            format_double(f.objective) + '\t' + std::to_string(f.steps) + '\t' + join_sizes(shape) + '\t' +
            join_doubles(flat, ',') + '\n';
  }
  write_file_atomic(path, text);
}

std::vector<FittedLoss> read_losses(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  auto lines = split(text, '\n');
  const std::string header = "lodl-losses " + std::to_string(kLossFormatVersion);
  if (lines.empty() || lines[0] != header) {
    throw FormatError("loss file " + path.string() + ": expected header '" + header + "'");
  }
  std::vector<FittedLoss> out;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto cols = split(lines[n], '\t');
    if (cols.size() != 6) throw FormatError("loss file " + path.string() + ": bad row " + std::to_string(n));
    FittedLoss f;
    f.instance_id = parse_u64(cols[0]);
    Family family;
    try {
      family = parse_family(cols[1]);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what());
    }
    f.objective = parse_double(cols[2]);
    f.steps = parse_u64(cols[3]);
    std::vector<std::size_t> shape;
    for (auto s : split(cols[4], ',')) shape.push_back(parse_u64(s));
    Reader r(cols[5].empty() ? std::vector<double>{} : split_doubles(cols[5], ','));
    auto need = [&](std::size_t k) {
      if (shape.size() != k) throw FormatError("loss file: bad shape for " + std::string(cols[1]));
    };
    switch (family) {
      case Family::kWeightedMSE: need(1); f.params = WeightedMSE{r.take(shape[0])}; break;
      case Family::kDirectedWeightedMSE: {
        need(1);
        DirectedWeightedMSE q;
        q.w_plus = r.take(shape[0]);
        q.w_minus = r.take(shape[0]);
        f.params = std::move(q);
        break;
      }
      case Family::kQuadratic: {
        need(2);
        Quadratic q{shape[0], shape[1], r.take(shape[0] * shape[1]), 0.0};
        q.w_min = r.one();
        f.params = std::move(q);
        break;
      }
      case Family::kDirectedQuadratic: {
        need(2);
        DirectedQuadratic q{shape[0], shape[1], r.take(shape[0] * shape[1]), {}, 0.0};
        q.l_minus = r.take(shape[0] * shape[1]);
        q.w_min = r.one();
        f.params = std::move(q);
        break;
      }
      case Family::kNN: {
        if (shape.size() < 2) throw FormatError("loss file: network needs at least two widths");
        NNLoss q;
        q.widths = shape;
        for (std::size_t l = 0; l + 1 < shape.size(); ++l) q.weights.push_back(r.take(shape[l] * shape[l + 1]));
        for (std::size_t l = 0; l + 1 < shape.size(); ++l) q.biases.push_back(r.take(shape[l + 1]));
        q.input_scale = r.one();
        q.output_scale = r.one();
        f.params = std::move(q);
        break;
      }
    }
    r.finish();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace lodl::loss
