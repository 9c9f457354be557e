#include "levy/observable.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "levy/random.hpp"

namespace levy {

namespace {

using json = nlohmann::json;

// Stack scratch for small evaluations, heap beyond that.
class Scratch {
public:
  explicit Scratch(std::size_t n) : n_(n) {
    if (n > kInline) heap_.resize(n);
  }
  double* data() noexcept { return n_ > kInline ? heap_.data() : inline_.data(); }
  std::span<double> span(std::size_t offset, std::size_t len) noexcept { return {data() + offset, len}; }

private:
  static constexpr std::size_t kInline = 256;
  std::size_t n_;
  std::array<double, kInline> inline_;
  std::vector<double> heap_;
};

Observable build_polynomial(const NodePtr& node) {
  Observable v;
  v.dim_out = node->polys.size();
  v.dim_in = v.dim_out ? node->polys.front().dim() : 0;
  for (const auto& p : node->polys)
    if (p.dim() != v.dim_in) throw DimensionError("polynomial observable components disagree on input dimension");
  const auto polys = node->polys;
  v.eval = [polys](std::span<const double> y, std::span<double> out) {
    for (std::size_t i = 0; i < polys.size(); ++i) out[i] = polys[i](y);
  };
  const std::size_t m = v.dim_in;
  v.jacobian = [polys, m](std::span<const double> y, std::span<double> jac) {
    for (std::size_t i = 0; i < polys.size(); ++i) polys[i].gradient(y, jac.subspan(i * m, m));
  };
  v.expression = node;
  return v;
}

Observable build_basis(const NodePtr& node) {
  Observable v;
  const std::size_t ng = node->polys.size();
  const std::size_t m = ng ? node->polys.front().dim() : node->reversal.dim();
  const std::size_t count = static_cast<std::size_t>(node->matrix.rows());
  if (static_cast<std::size_t>(node->matrix.cols()) != ng ||
      static_cast<std::size_t>(node->offset.size()) != count || node->reversal.dim() != m)
    throw DimensionError("basis observable has inconsistent coefficient shapes");
  v.dim_in = m;
  v.dim_out = count;
  const auto gens = node->polys;
  const Matrix coeffs = node->matrix;
  const Vector offset = node->offset;
  const AffineMap rev = node->reversal;

  v.eval = [gens, coeffs, offset, rev, m, ng, count](std::span<const double> y, std::span<double> out) {
    Scratch buf(m + ng);
    auto ry = buf.span(0, m);
    auto s = buf.span(m, ng);
    rev.apply(y, ry);
    for (std::size_t k = 0; k < ng; ++k) s[k] = 0.5 * (gens[k](y) + gens[k](ry));
    for (std::size_t j = 0; j < count; ++j) {
      double acc = offset(static_cast<Eigen::Index>(j));
      for (std::size_t k = 0; k < ng; ++k)
        acc += coeffs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) * s[k];
      out[j] = acc;
    }
  };
  v.jacobian = [gens, coeffs, rev, m, ng, count](std::span<const double> y, std::span<double> jac) {
    Scratch buf(m * (ng + 3));
    auto ry = buf.span(0, m);
    auto gy = buf.span(m, m);
    auto gr = buf.span(2 * m, m);
    auto rows = buf.span(3 * m, ng * m);
    rev.apply(y, ry);
    for (std::size_t k = 0; k < ng; ++k) {
      gens[k].gradient(y, gy);
      gens[k].gradient(ry, gr);
      for (std::size_t j = 0; j < m; ++j) {
        double acc = gy[j];
        for (std::size_t i = 0; i < m; ++i)
          acc += gr[i] * rev.linear(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        rows[k * m + j] = 0.5 * acc;
      }
    }
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ng; ++k)
          acc += coeffs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * rows[k * m + j];
        jac[r * m + j] = acc;
      }
  };
  v.expression = node;
  return v;
}

Observable build_linear(const NodePtr& node, const FastSystem& system) {
  if (node->children.size() != 1) throw Error("linear observable node needs one child");
  const Observable child = build_observable(node->children.front(), system);
  const Matrix mat = node->matrix;
  if (static_cast<std::size_t>(mat.cols()) != child.dim_out)
    throw DimensionError("linear observable: matrix columns do not match the inner output dimension");
  Observable v;
  v.dim_in = child.dim_in;
  v.dim_out = static_cast<std::size_t>(mat.rows());
  const std::size_t inner = child.dim_out;
  const std::size_t m = child.dim_in;
  const auto ceval = child.eval;
  v.eval = [ceval, mat, inner](std::span<const double> y, std::span<double> out) {
    Scratch buf(inner);
    auto c = buf.span(0, inner);
    ceval(y, c);
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += mat(i, static_cast<Eigen::Index>(k)) * c[k];
      out[static_cast<std::size_t>(i)] = acc;
    }
  };
  if (child.has_jacobian()) {
    const auto cjac = child.jacobian;
    v.jacobian = [cjac, mat, inner, m](std::span<const double> y, std::span<double> jac) {
      Scratch buf(inner * m);
      auto cj = buf.span(0, inner * m);
      cjac(y, cj);
      for (Eigen::Index i = 0; i < mat.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < inner; ++k) acc += mat(i, static_cast<Eigen::Index>(k)) * cj[k * m + j];
          jac[static_cast<std::size_t>(i) * m + j] = acc;
        }
    };
  }
  v.expression = node;
  return v;
}

Observable build_sum(const NodePtr& node, const FastSystem& system) {
  if (node->children.empty() || node->children.size() != node->weights.size())
    throw Error("sum observable node needs one weight per term");
  std::vector<Observable> terms;
  for (const auto& c : node->children) terms.push_back(build_observable(c, system));
  Observable v;
  v.dim_in = terms.front().dim_in;
  v.dim_out = terms.front().dim_out;
  bool all_jac = true;
  for (const auto& t : terms) {
    if (t.dim_in != v.dim_in || t.dim_out != v.dim_out) throw DimensionError("sum observable terms disagree on dimensions");
    all_jac = all_jac && t.has_jacobian();
  }
  const auto weights = node->weights;
  const std::size_t d = v.dim_out;
  const std::size_t m = v.dim_in;
  std::vector<ObservableFn> evals;
  std::vector<JacobianFn> jacs;
  for (const auto& t : terms) {
    evals.push_back(t.eval);
    jacs.push_back(t.jacobian);
  }
  v.eval = [evals, weights, d](std::span<const double> y, std::span<double> out) {
    Scratch buf(d);
    auto tmp = buf.span(0, d);
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
    for (std::size_t t = 0; t < evals.size(); ++t) {
      evals[t](y, tmp);
      for (std::size_t i = 0; i < d; ++i) out[i] += weights[t] * tmp[i];
    }
  };
  if (all_jac) {
    v.jacobian = [jacs, weights, d, m](std::span<const double> y, std::span<double> jac) {
      Scratch buf(d * m);
      auto tmp = buf.span(0, d * m);
      std::fill(jac.begin(), jac.begin() + static_cast<std::ptrdiff_t>(d * m), 0.0);
      for (std::size_t t = 0; t < jacs.size(); ++t) {
        jacs[t](y, tmp);
        for (std::size_t i = 0; i < d * m; ++i) jac[i] += weights[t] * tmp[i];
      }
    };
  }
  v.expression = node;
  return v;
}

Observable build_constructed(const NodePtr& node, const FastSystem& system) {
  if (node->children.size() != 2) throw Error("constructed observable node needs children f and h");
  const Observable f = build_observable(node->children[0], system);
  const Observable h = build_observable(node->children[1], system);
  if (f.dim_in != system.dim || h.dim_in != system.dim)
    throw DimensionError("constructed observable: f and h must be functions on the fast state space");
  Observable v;
  v.dim_in = system.dim;
  const std::size_t dp = f.dim_out;
  const std::size_t dm = h.dim_out;
  const std::size_t m = system.dim;
  v.dim_out = dp + dm;
  const auto feval = f.eval;
  const auto field = system.field;
  if (h.has_jacobian()) {
    const auto hjac = h.jacobian;
    v.eval = [feval, hjac, field, dp, dm, m](std::span<const double> y, std::span<double> out) {
      Scratch buf(m + dm * m);
      auto g = buf.span(0, m);
      auto jac = buf.span(m, dm * m);
      feval(y, out.subspan(0, dp));
      for (std::size_t i = 0; i < dp; ++i) out[i] = -out[i];
      field(y, g);
      hjac(y, jac);
      for (std::size_t r = 0; r < dm; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += jac[r * m + j] * g[j];
        out[dp + r] = acc;
      }
    };
  } else {
    // central difference of h along the flow direction
    const auto heval = h.eval;
    v.eval = [feval, heval, field, dp, dm, m](std::span<const double> y, std::span<double> out) {
      Scratch buf(3 * m + 2 * dm);
      auto g = buf.span(0, m);
      auto yp = buf.span(m, m);
      auto ym = buf.span(2 * m, m);
      auto hp = buf.span(3 * m, dm);
      auto hm = buf.span(3 * m + dm, dm);
      feval(y, out.subspan(0, dp));
      for (std::size_t i = 0; i < dp; ++i) out[i] = -out[i];
      field(y, g);
      double gnorm = 0.0, ynorm = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        gnorm = std::max(gnorm, std::abs(g[j]));
        ynorm = std::max(ynorm, std::abs(y[j]));
      }
      if (gnorm == 0.0) {
        for (std::size_t r = 0; r < dm; ++r) out[dp + r] = 0.0;
        return;
      }
      const double delta = 1e-5 * std::max(1.0, ynorm) / gnorm;
      for (std::size_t j = 0; j < m; ++j) {
        yp[j] = y[j] + delta * g[j];
        ym[j] = y[j] - delta * g[j];
      }
      heval(yp, hp);
      heval(ym, hm);
      for (std::size_t r = 0; r < dm; ++r) out[dp + r] = (hp[r] - hm[r]) / (2.0 * delta);
    };
  }
  v.expression = node;
  return v;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Matrix json_matrix(const json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(r)).size()) != cols)
      throw ConfigError("ragged matrix in observable file");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

json node_json(const ObservableNode& n, const std::vector<std::string>& names) {
  json j;
  switch (n.kind) {
    case ObservableNode::Kind::polynomial: {
      j["kind"] = "polynomial";
      json comps = json::array();
      for (const auto& p : n.polys) comps.push_back(p.to_string(names));
      j["components"] = comps;
      break;
    }
    case ObservableNode::Kind::basis: {
      j["kind"] = "basis";
      json gens = json::array();
      for (const auto& p : n.polys) gens.push_back(p.to_string(names));
      j["generators"] = gens;
      j["coefficients"] = matrix_json(n.matrix);
      j["offset"] = std::vector<double>(n.offset.data(), n.offset.data() + n.offset.size());
      j["reversal_linear"] = matrix_json(n.reversal.linear);
      j["reversal_offset"] =
          std::vector<double>(n.reversal.offset.data(), n.reversal.offset.data() + n.reversal.offset.size());
      break;
    }
    case ObservableNode::Kind::linear:
      j["kind"] = "linear";
      j["matrix"] = matrix_json(n.matrix);
      j["child"] = node_json(*n.children.at(0), names);
      break;
    case ObservableNode::Kind::sum: {
      j["kind"] = "sum";
      j["weights"] = n.weights;
      json terms = json::array();
      for (const auto& c : n.children) terms.push_back(node_json(*c, names));
      j["terms"] = terms;
      break;
    }
    case ObservableNode::Kind::constructed:
      j["kind"] = "constructed";
      j["f"] = node_json(*n.children.at(0), names);
      j["h"] = node_json(*n.children.at(1), names);
      break;
  }
  return j;
}

NodePtr json_node(const json& j, const std::vector<std::string>& names) {
  auto n = std::make_shared<ObservableNode>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "polynomial") {
    n->kind = ObservableNode::Kind::polynomial;
    for (const auto& c : j.at("components")) n->polys.push_back(Polynomial::parse(c.get<std::string>(), names));
  } else if (kind == "basis") {
    n->kind = ObservableNode::Kind::basis;
    for (const auto& c : j.at("generators")) n->polys.push_back(Polynomial::parse(c.get<std::string>(), names));
    n->matrix = json_matrix(j.at("coefficients"), static_cast<Eigen::Index>(n->polys.size()));
    const auto off = j.at("offset").get<std::vector<double>>();
    n->offset = Eigen::Map<const Vector>(off.data(), static_cast<Eigen::Index>(off.size()));
    n->reversal.linear = json_matrix(j.at("reversal_linear"));
    const auto roff = j.at("reversal_offset").get<std::vector<double>>();
    n->reversal.offset = Eigen::Map<const Vector>(roff.data(), static_cast<Eigen::Index>(roff.size()));
  } else if (kind == "linear") {
    n->kind = ObservableNode::Kind::linear;
    n->matrix = json_matrix(j.at("matrix"));
    n->children.push_back(json_node(j.at("child"), names));
  } else if (kind == "sum") {
    n->kind = ObservableNode::Kind::sum;
    n->weights = j.at("weights").get<std::vector<double>>();
    for (const auto& t : j.at("terms")) n->children.push_back(json_node(t, names));
  } else if (kind == "constructed") {
    n->kind = ObservableNode::Kind::constructed;
    n->children.push_back(json_node(j.at("f"), names));
    n->children.push_back(json_node(j.at("h"), names));
  } else {
    throw ConfigError("unknown observable node kind '" + kind + "'");
  }
  return n;
}

}  // namespace

Vector Observable::operator()(std::span<const double> y) const {
  Vector out(static_cast<Eigen::Index>(dim_out));
  eval(y, std::span<double>(out.data(), dim_out));
  return out;
}

Observable build_observable(const NodePtr& node, const FastSystem& system) {
  if (!node) throw Error("null observable expression");
  switch (node->kind) {
    case ObservableNode::Kind::polynomial: return build_polynomial(node);
    case ObservableNode::Kind::basis: return build_basis(node);
    case ObservableNode::Kind::linear: return build_linear(node, system);
    case ObservableNode::Kind::sum: return build_sum(node, system);
    case ObservableNode::Kind::constructed: return build_constructed(node, system);
  }
  throw Error("unreachable observable kind");
}

Observable polynomial_observable(std::vector<Polynomial> components) {
  auto node = std::make_shared<ObservableNode>();
  node->kind = ObservableNode::Kind::polynomial;
  node->polys = std::move(components);
  return build_polynomial(node);
}

Observable parse_polynomial_observable(const std::vector<std::string>& components,
                                       const FastSystem& system) {
  std::vector<Polynomial> polys;
  for (const auto& c : components) polys.push_back(Polynomial::parse(c, system.variables));
  return polynomial_observable(std::move(polys));
}

Observable transform(const Matrix& m, const Observable& v) {
  if (static_cast<std::size_t>(m.cols()) != v.dim_out)
    throw DimensionError("transform: matrix columns do not match the observable dimension");
  Observable out;
  out.dim_in = v.dim_in;
  out.dim_out = static_cast<std::size_t>(m.rows());
  const auto ev = v.eval;
  const std::size_t inner = v.dim_out;
  const std::size_t mm = v.dim_in;
  out.eval = [ev, m, inner](std::span<const double> y, std::span<double> o) {
    Scratch buf(inner);
    auto c = buf.span(0, inner);
    ev(y, c);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += m(i, static_cast<Eigen::Index>(k)) * c[k];
      o[static_cast<std::size_t>(i)] = acc;
    }
  };
  if (v.has_jacobian()) {
    const auto jv = v.jacobian;
    out.jacobian = [jv, m, inner, mm](std::span<const double> y, std::span<double> jac) {
      Scratch buf(inner * mm);
      auto cj = buf.span(0, inner * mm);
      jv(y, cj);
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < mm; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < inner; ++k) acc += m(i, static_cast<Eigen::Index>(k)) * cj[k * mm + j];
          jac[static_cast<std::size_t>(i) * mm + j] = acc;
        }
    };
  }
  if (v.expression) {
    auto node = std::make_shared<ObservableNode>();
    node->kind = ObservableNode::Kind::linear;
    node->matrix = m;
    node->children.push_back(v.expression);
    out.expression = node;
  }
  return out;
}

Observable combine(const std::vector<double>& weights, const std::vector<Observable>& terms) {
  if (terms.empty() || weights.size() != terms.size())
    throw DimensionError("combine: need one weight per term");
  Observable out;
  out.dim_in = terms.front().dim_in;
  out.dim_out = terms.front().dim_out;
  bool all_jac = true;
  bool all_expr = true;
  std::vector<ObservableFn> evals;
  std::vector<JacobianFn> jacs;
  for (const auto& t : terms) {
    if (t.dim_in != out.dim_in || t.dim_out != out.dim_out) throw DimensionError("combine: dimension mismatch");
    all_jac = all_jac && t.has_jacobian();
    all_expr = all_expr && static_cast<bool>(t.expression);
    evals.push_back(t.eval);
    jacs.push_back(t.jacobian);
  }
  const std::size_t d = out.dim_out;
  const std::size_t m = out.dim_in;
  out.eval = [evals, weights, d](std::span<const double> y, std::span<double> o) {
    Scratch buf(d);
    auto tmp = buf.span(0, d);
    std::fill(o.begin(), o.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
    for (std::size_t t = 0; t < evals.size(); ++t) {
      evals[t](y, tmp);
      for (std::size_t i = 0; i < d; ++i) o[i] += weights[t] * tmp[i];
    }
  };
  if (all_jac) {
    out.jacobian = [jacs, weights, d, m](std::span<const double> y, std::span<double> jac) {
      Scratch buf(d * m);
      auto tmp = buf.span(0, d * m);
      std::fill(jac.begin(), jac.begin() + static_cast<std::ptrdiff_t>(d * m), 0.0);
      for (std::size_t t = 0; t < jacs.size(); ++t) {
        jacs[t](y, tmp);
        for (std::size_t i = 0; i < d * m; ++i) jac[i] += weights[t] * tmp[i];
      }
    };
  }
  if (all_expr) {
    auto node = std::make_shared<ObservableNode>();
    node->kind = ObservableNode::Kind::sum;
    node->weights = weights;
    for (const auto& t : terms) node->children.push_back(t.expression);
    out.expression = node;
  }
  return out;
}

Observable with_equivariance(Observable v, const Matrix& a) {
  if (static_cast<std::size_t>(a.rows()) != v.dim_out || a.rows() != a.cols())
    throw DimensionError("equivariance matrix must be d x d for a d-dimensional observable");
  v.equivariance = a;
  return v;
}

EquivarianceCheck equivariance_residual(const Observable& v, const AffineMap& reversal,
                                        const Matrix& a, const Trajectory& probe) {
  if (reversal.dim() != v.dim_in || probe.dim != v.dim_in)
    throw DimensionError("equivariance check: reversal, probe and observable dimensions differ");
  if (static_cast<std::size_t>(a.rows()) != v.dim_out)
    throw DimensionError("equivariance check: A does not match the observable dimension");
  const std::size_t m = v.dim_in;
  const std::size_t d = v.dim_out;
  std::vector<double> ry(m), vy(d), vr(d);
  EquivarianceCheck out;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const auto y = probe.point(i);
    reversal.apply(y, ry);
    v.eval(y, vy);
    v.eval(ry, vr);
    double res = 0.0, scale = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double av = 0.0;
      for (std::size_t c = 0; c < d; ++c) av += a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * vy[c];
      res = std::max(res, std::abs(vr[r] - av));
      scale = std::max(scale, std::abs(vr[r]) + std::abs(vy[r]));
    }
    if (res > out.residual || out.worst_point.empty()) {
      out.residual = std::max(out.residual, res);
      out.scale = scale;
      out.worst_point.assign(y.begin(), y.end());
    }
  }
  return out;
}

void require_equivariance(const Observable& v, const AffineMap& reversal, const Matrix& a,
                          const Trajectory& probe, double tol, const std::string& what) {
  const auto chk = equivariance_residual(v, reversal, a, probe);
  if (chk.residual > tol * std::max(1.0, chk.scale)) {
    std::ostringstream os;
    os << what << ": equivariance residual " << chk.residual << " exceeds tolerance";
    throw SymmetryError(os.str(), chk.worst_point, chk.residual);
  }
}

Matrix observe(const Trajectory& traj, const Observable& v) {
  if (traj.dim != v.dim_in) throw DimensionError("observe: observable input dimension does not match the trajectory");
  const auto n = static_cast<Eigen::Index>(traj.size());
  Matrix out(static_cast<Eigen::Index>(v.dim_out), n);
  for (Eigen::Index k = 0; k < n; ++k)
    v.eval(traj.point(static_cast<std::size_t>(k)), std::span<double>(out.col(k).data(), v.dim_out));
  return out;
}

Trajectory default_probes(const FastSystem& system, std::size_t count, std::uint64_t seed) {
  Trajectory probe;
  probe.dim = system.dim;
  const CounterRng rng(seed, 4);
  const std::size_t half = count / 2;
  std::vector<double> y = jittered_initial(system, seed);
  Rk4 rk(system.dim);
  const double h = system.default_step;
  for (std::size_t i = 0; i < half; ++i) {
    for (int k = 0; k < 50; ++k) rk.step(system.field, std::span<double>(y), h);
    bool finite = true;
    for (double x : y) finite = finite && std::isfinite(x);
    if (!finite) y = jittered_initial(system, seed + i + 1);
    probe.data.insert(probe.data.end(), y.begin(), y.end());
  }
  std::uint64_t c = 0;
  for (std::size_t i = half; i < count; ++i)
    for (std::size_t k = 0; k < system.dim; ++k) probe.data.push_back(2.0 * rng.normal(c++));
  return probe;
}

std::string serialize_observable(const Observable& v, const FastSystem& system) {
  if (!v.expression) throw Error("observable has no replayable expression");
  json j;
  j["format"] = "levy-observable";
  j["version"] = 1;
  j["system"] = system.name;
  j["dim_in"] = v.dim_in;
  j["dim_out"] = v.dim_out;
  j["equivariance"] = v.equivariance ? matrix_json(*v.equivariance) : json(nullptr);
  j["expression"] = node_json(*v.expression, system.variables);
  return j.dump(1);
}

Observable load_observable_text(const std::string& text, const FastSystem& system) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("observable file is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "levy-observable") throw ConfigError("not a levy observable file");
  if (j.at("system").get<std::string>() != system.name)
    throw ConfigError("observable was built for system '" + j.at("system").get<std::string>() + "', not '" +
                      system.name + "'");
  Observable v = build_observable(json_node(j.at("expression"), system.variables), system);
  if (!j.at("equivariance").is_null()) v.equivariance = json_matrix(j.at("equivariance"));
  return v;
}

void save_observable(const std::string& path, const Observable& v, const FastSystem& system) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write observable file '" + path + "'");
  out << serialize_observable(v, system) << '\n';
}

Observable load_observable(const std::string& path, const FastSystem& system) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open observable file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_observable_text(buf.str(), system);
}

}  // namespace levy
