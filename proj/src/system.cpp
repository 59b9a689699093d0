#include "zclf/system.hpp"

#include <charconv>
#include <stdexcept>

namespace zclf {

namespace {

void check_state_only(const Expression& e, std::size_t n, const std::string& what) {
  if (e.required_arity() > n)
    throw std::invalid_argument(what + " references x" + std::to_string(e.required_arity()) + " beyond n=" +
                                std::to_string(n));
}

}  // namespace

void ControlAffineSystem::validate() const {
  if (n == 0) throw std::invalid_argument("system dimension n must be positive");
  if (f.size() != n) throw std::invalid_argument("f must have n entries");
  if (g.size() != n) throw std::invalid_argument("g must have n rows");
  for (std::size_t i = 0; i < n; ++i) {
    check_state_only(f[i], n, "f" + std::to_string(i + 1));
    if (g[i].size() != k) throw std::invalid_argument("g row " + std::to_string(i + 1) + " must have k entries");
    for (std::size_t j = 0; j < k; ++j) check_state_only(g[i][j], n, "g entry");
  }
  if (!domain.empty() && domain.size() != n) throw std::invalid_argument("domain must have n intervals");
  for (const auto& iv : domain)
    if (!(iv.lo <= iv.hi) || !iv.is_finite()) throw std::invalid_argument("domain intervals must be finite, lo <= hi");
  const std::vector<double> origin(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = eval(f[i], origin);
    if (std::abs(v) > 1e-12)
      throw std::invalid_argument("origin is not an equilibrium: f" + std::to_string(i + 1) + "(0) = " +
                                  std::to_string(v));
  }
}

Eigen::VectorXd ControlAffineSystem::drift(std::span<const double> x) const {
  Eigen::VectorXd out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = eval(f[i], x);
  return out;
}

Eigen::MatrixXd ControlAffineSystem::input_matrix(std::span<const double> x) const {
  Eigen::MatrixXd out(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out(i, j) = eval(g[i][j], x);
  return out;
}

bool CostSpec::has_constant_R() const {
  for (const auto& row : R)
    for (const auto& e : row)
      if (!e.is_constant()) return false;
  return true;
}

Eigen::MatrixXd CostSpec::R_at(std::span<const double> x) const {
  const std::size_t k = R.size();
  Eigen::MatrixXd out(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) out(i, j) = eval(R[i][j], x);
  return out;
}

void CostSpec::validate(std::size_t n, std::size_t k) const {
  check_state_only(q, n, "q");
  if (R.size() != k) throw std::invalid_argument("R must be k x k");
  for (const auto& row : R) {
    if (row.size() != k) throw std::invalid_argument("R must be k x k");
    for (const auto& e : row) check_state_only(e, n, "R entry");
  }
  if (static_cast<std::size_t>(Q.rows()) != n || static_cast<std::size_t>(Q.cols()) != n)
    throw std::invalid_argument("Q must be n x n");
  if (!Q.isApprox(Q.transpose())) throw std::invalid_argument("Q must be symmetric");
  const std::vector<double> origin(n, 0.0);
  if (std::abs(eval(q, origin)) > 1e-12) throw std::invalid_argument("q(0) must be 0");
  const Eigen::MatrixXd R0 = R_at(origin);
  if (!R0.isApprox(R0.transpose())) throw std::invalid_argument("R must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(R0);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("R(0) must be positive definite");
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> linearize(const ControlAffineSystem& sys) {
  const std::vector<double> origin(sys.n, 0.0);
  Eigen::MatrixXd A(sys.n, sys.n);
  for (std::size_t i = 0; i < sys.n; ++i)
    for (std::size_t j = 0; j < sys.n; ++j) A(i, j) = eval(differentiate(sys.f[i], j), origin);
  return {A, sys.input_matrix(origin)};
}

std::vector<Expression> closed_loop(const ControlAffineSystem& sys, std::span<const Expression> controller) {
  if (controller.size() != sys.k)
    throw std::invalid_argument("controller has " + std::to_string(controller.size()) + " components, expected " +
                                std::to_string(sys.k));
  for (const auto& c : controller) check_state_only(c, sys.n, "controller");
  std::vector<Expression> field(sys.n);
  for (std::size_t i = 0; i < sys.n; ++i) {
    Expression e = sys.f[i];
    for (std::size_t j = 0; j < sys.k; ++j) e = e + sys.g[i][j] * controller[j];
    field[i] = e;
  }
  return field;
}

CostSpec quadratic_cost(const Eigen::MatrixXd& Q, std::size_t k) {
  const auto n = static_cast<std::size_t>(Q.rows());
  CostSpec cost;
  Expression q = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (Q(i, j) == 0.0) continue;
      const Expression xi = Expression::variable(i);
      const Expression xj = Expression::variable(j);
      q = q + Q(i, j) * (i == j ? pow(xi, 2) : xi * xj);
    }
  cost.q = q;
  cost.R.assign(k, std::vector<Expression>(k, Expression(0.0)));
  for (std::size_t i = 0; i < k; ++i) cost.R[i][i] = 1.0;
  cost.Q = Q;
  return cost;
}

namespace {

Expression x(std::size_t i) { return Expression::variable(i - 1); }

Benchmark finish(ControlAffineSystem sys, Box data_domain = {}) {
  sys.validate();
  Benchmark b;
  b.cost = quadratic_cost(Eigen::MatrixXd::Identity(sys.n, sys.n), sys.k);
  b.data_domain = data_domain.empty() ? sys.domain : std::move(data_domain);
  b.system = std::move(sys);
  return b;
}

ControlAffineSystem vdp_input() {
  ControlAffineSystem s;
  s.name = "vdp_input";
  s.n = 2;
  s.k = 1;
  s.f = {x(2), -x(1) + x(2) * (1.0 - pow(x(1), 2))};
  s.g = {{0.0}, {1.0}};
  s.domain = make_box(2, -10.0, 10.0);
  return s;
}

ControlAffineSystem pendulum() {
  constexpr double gc = 9.81, b = 0.1, l = 0.5, m = 0.15;
  ControlAffineSystem s;
  s.name = "pendulum";
  s.n = 2;
  s.k = 1;
  s.f = {x(2), (gc / l) * sin(x(1)) - (b / (m * l * l)) * x(2)};
  s.g = {{0.0}, {1.0 / (m * l * l)}};
  s.domain = make_box(2, -10.0, 10.0);
  return s;
}

ControlAffineSystem reversed_vdp() {
  ControlAffineSystem s;
  s.name = "reversed_vdp";
  s.n = 2;
  s.k = 1;
  // x2' = x1 + (1 + u)(x1^2 - 1) x2
  const Expression damping = (pow(x(1), 2) - 1.0) * x(2);
  s.f = {-x(2), x(1) + damping};
  s.g = {{0.0}, {damping}};
  s.domain = make_box(2, -8.0, 8.0);
  return s;
}

}  // namespace

ControlAffineSystem mass_spring_chain(std::size_t masses) {
  if (masses < 1) throw std::invalid_argument("mass_spring_chain needs at least one mass");
  ControlAffineSystem s;
  s.name = masses == 2 ? "mass_spring_4d" : "mass_spring_chain(" + std::to_string(masses) + ")";
  s.n = 2 * masses;
  s.k = 1;
  std::vector<Expression> force(masses, Expression(0.0));
  // positions are odd states x1, x3, ...; velocities even states x2, x4, ...
  auto pos = [](std::size_t i) { return x(2 * i + 1); };
  auto vel = [](std::size_t i) { return x(2 * i + 2); };
  force[0] = -(pos(0) + 0.1 * pow(pos(0), 3));
  for (std::size_t i = 0; i + 1 < masses; ++i) {
    const Expression coupling = (pos(i + 1) - pos(i)) - 0.1 * (vel(i + 1) - vel(i));
    force[i] = force[i] + coupling;
    force[i + 1] = force[i + 1] - coupling;
  }
  s.f.resize(s.n);
  s.g.assign(s.n, std::vector<Expression>(1, Expression(0.0)));
  for (std::size_t i = 0; i < masses; ++i) {
    s.f[2 * i] = vel(i);
    s.f[2 * i + 1] = force[i];
  }
  s.g[1][0] = 1.0;
  s.domain = make_box(s.n, -10.0, 10.0);
  return s;
}

Benchmark get_benchmark(std::string_view name) {
  if (name == "vdp_input") return finish(vdp_input());
  if (name == "pendulum") return finish(pendulum());
  if (name == "reversed_vdp") return finish(reversed_vdp(), make_box(2, -4.0, 4.0));
  if (name == "mass_spring_4d") return finish(mass_spring_chain(2));
  constexpr std::string_view chain = "mass_spring_chain";
  if (name.starts_with(chain)) {
    std::string_view rest = name.substr(chain.size());
    if (rest.size() >= 3 && rest.front() == '(' && rest.back() == ')') {
      rest = rest.substr(1, rest.size() - 2);
      std::size_t masses = 0;
      auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), masses);
      if (ec == std::errc() && ptr == rest.data() + rest.size() && masses >= 1) return finish(mass_spring_chain(masses));
    }
  }
  throw std::invalid_argument("unknown benchmark '" + std::string(name) + "'");
}

std::vector<std::string> benchmark_names() {
  return {"vdp_input", "mass_spring_4d", "mass_spring_chain(N)", "pendulum", "reversed_vdp"};
}

std::vector<double> lower_corner(const Box& box) {
  std::vector<double> out;
  for (const auto& iv : box) out.push_back(iv.lo);
  return out;
}

nlohmann::json box_to_json(const Box& box) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& iv : box) j.push_back({iv.lo, iv.hi});
  return j;
}

Box box_from_json(const nlohmann::json& j) {
  Box box;
  for (const auto& iv : j) {
    if (!iv.is_array() || iv.size() != 2) throw std::invalid_argument("box entries must be [lo, hi]");
    box.emplace_back(iv[0].get<double>(), iv[1].get<double>());
  }
  return box;
}

Benchmark benchmark_from_json(const nlohmann::json& j) {
  ControlAffineSystem s;
  s.name = j.value("name", std::string("custom"));
  s.n = j.at("n").get<std::size_t>();
  s.k = j.at("k").get<std::size_t>();
  for (const auto& e : j.at("f")) s.f.push_back(parse_expression(e.get<std::string>(), s.n));
  for (const auto& row : j.at("g")) {
    std::vector<Expression> r;
    for (const auto& e : row) r.push_back(parse_expression(e.get<std::string>(), s.n));
    s.g.push_back(std::move(r));
  }
  s.domain = j.contains("domain") ? box_from_json(j.at("domain")) : make_box(s.n, -10.0, 10.0);
  s.validate();

  Benchmark b;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(s.n, s.n);
  if (j.contains("Q")) {
    const auto& jq = j.at("Q");
    for (std::size_t r = 0; r < s.n; ++r)
      for (std::size_t c = 0; c < s.n; ++c) Q(r, c) = jq.at(r).at(c).get<double>();
  }
  b.cost = quadratic_cost(Q, s.k);
  if (j.contains("q")) b.cost.q = parse_expression(j.at("q").get<std::string>(), s.n);
  if (j.contains("R")) {
    b.cost.R.clear();
    for (const auto& row : j.at("R")) {
      std::vector<Expression> r;
      for (const auto& e : row)
        r.push_back(e.is_string() ? parse_expression(e.get<std::string>(), s.n) : Expression(e.get<double>()));
      b.cost.R.push_back(std::move(r));
    }
  }
  b.cost.validate(s.n, s.k);
  b.data_domain = j.contains("data_domain") ? box_from_json(j.at("data_domain")) : s.domain;
  b.system = std::move(s);
  return b;
}

nlohmann::json to_json(const Benchmark& b) {
  const auto& s = b.system;
  nlohmann::json j;
  j["name"] = s.name;
  j["n"] = s.n;
  j["k"] = s.k;
  for (const auto& e : s.f) j["f"].push_back(e.to_string());
  for (const auto& row : s.g) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& e : row) r.push_back(e.to_string());
    j["g"].push_back(r);
  }
  j["domain"] = box_to_json(s.domain);
  j["data_domain"] = box_to_json(b.data_domain);
  j["q"] = b.cost.q.to_string();
  for (const auto& row : b.cost.R) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& e : row) r.push_back(e.to_string());
    j["R"].push_back(r);
  }
  for (Eigen::Index r = 0; r < b.cost.Q.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < b.cost.Q.cols(); ++c) row.push_back(b.cost.Q(r, c));
    j["Q"].push_back(row);
  }
  return j;
}

}  // namespace zclf
