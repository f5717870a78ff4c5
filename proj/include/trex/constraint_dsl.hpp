#pragma once

// Constraint expression language.
//
// Grounded instructions become cost expressions in a small, pure, sandboxed
// language instead of executable code.  An expression reads bound
// representations and a candidate end-effector pose and evaluates to a scalar
// cost; a constraint is satisfied when its cost is at or below its tolerance.
//
// Syntax is call-only (no infix operators):
//   norm(sub(point_of(rep("red_block")), add(point_of(rep("green_block")),
//        vec(0, 0, 0.05))))
//
// Static types: scalar, point, vec, rot, pose, point_set, region, vector
// (an anchored direction; it coerces to vec).  Representations of kind
// topo_order or state_machine_ref belong to stage programs and are rejected
// here.  The checker runs against the declared bindings before anything is
// extracted, so type errors surface at grounding time.
//
// Bindings marked `attached` were captured while the object was held; their
// values ride with the candidate end-effector pose during evaluation, which
// is what lets placement constraints on a grasped object drive the solver.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "trex/errors.hpp"
#include "trex/representation.hpp"

namespace trex {

// --- abstract syntax ---------------------------------------------------------

enum class ExprOp {
  literal,
  rep,
  ee_pos,
  ee_rot,
  ee_pose,
  vec,
  add,
  sub,
  mul,
  abs,
  max,
  min,
  norm,
  dot,
  cross,
  angle_between,
  geodesic,
  point_of,
  translation_of,
  rotation_of,
  axis_of,
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  ExprOp op = ExprOp::literal;
  double literal = 0.0;
  std::string name;  // rep binding name
  int axis = 0;      // axis_of: 0=x 1=y 2=z
  std::vector<ExprPtr> args;
  std::size_t pos = 0;  // source offset, for diagnostics
};

enum class ValueType { scalar, point, vec, rot, pose, point_set, region, vector };

inline const char* value_type_name(ValueType t) {
  switch (t) {
    case ValueType::scalar: return "scalar";
    case ValueType::point: return "point";
    case ValueType::vec: return "vec";
    case ValueType::rot: return "rot";
    case ValueType::pose: return "pose";
    case ValueType::point_set: return "point_set";
    case ValueType::region: return "region";
    case ValueType::vector: return "vector";
  }
  throw Error("invalid value type");
}

// --- parser ------------------------------------------------------------------

namespace dsl_detail {

struct Token {
  enum class Kind { ident, number, string, lparen, rparen, comma, end };
  Kind kind = Kind::end;
  std::string text;
  double number = 0.0;
  std::size_t pos = 0;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) {}

  Token next() {
    while (i_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[i_]))) {
      ++i_;
    }
    Token tok;
    tok.pos = i_;
    if (i_ >= src_.size()) return tok;
    const char c = src_[i_];
    if (c == '(') {
      ++i_;
      tok.kind = Token::Kind::lparen;
      return tok;
    }
    if (c == ')') {
      ++i_;
      tok.kind = Token::Kind::rparen;
      return tok;
    }
    if (c == ',') {
      ++i_;
      tok.kind = Token::Kind::comma;
      return tok;
    }
    if (c == '"') {
      ++i_;
      std::string out;
      while (i_ < src_.size() && src_[i_] != '"') {
        if (src_[i_] == '\\') throw ParseError("escape sequences are not allowed", i_);
        out.push_back(src_[i_++]);
      }
      if (i_ >= src_.size()) throw ParseError("unterminated string literal", tok.pos);
      ++i_;
      tok.kind = Token::Kind::string;
      tok.text = std::move(out);
      return tok;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = i_;
      while (i_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[i_])) || src_[i_] == '_')) {
        ++i_;
      }
      tok.kind = Token::Kind::ident;
      tok.text = src_.substr(start, i_ - start);
      return tok;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.') {
      const char* begin = src_.c_str() + i_;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin) throw ParseError("malformed number", i_);
      if (!std::isfinite(v)) throw ParseError("number literal must be finite", i_);
      i_ += static_cast<std::size_t>(end - begin);
      tok.kind = Token::Kind::number;
      tok.number = v;
      return tok;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", i_);
  }

 private:
  const std::string& src_;
  std::size_t i_ = 0;
};

struct OpInfo {
  ExprOp op;
  int min_args;
  int max_args;  // -1 = unbounded
};

inline const std::map<std::string, OpInfo>& op_table() {
  static const std::map<std::string, OpInfo> table = {
      {"rep", {ExprOp::rep, 1, 1}},
      {"ee_pos", {ExprOp::ee_pos, 0, 0}},
      {"ee_rot", {ExprOp::ee_rot, 0, 0}},
      {"ee_pose", {ExprOp::ee_pose, 0, 0}},
      {"vec", {ExprOp::vec, 3, 3}},
      {"add", {ExprOp::add, 2, 2}},
      {"sub", {ExprOp::sub, 2, 2}},
      {"mul", {ExprOp::mul, 2, 2}},
      {"abs", {ExprOp::abs, 1, 1}},
      {"max", {ExprOp::max, 2, -1}},
      {"min", {ExprOp::min, 2, -1}},
      {"norm", {ExprOp::norm, 1, 1}},
      {"dot", {ExprOp::dot, 2, 2}},
      {"cross", {ExprOp::cross, 2, 2}},
      {"angle_between", {ExprOp::angle_between, 2, 2}},
      {"geodesic", {ExprOp::geodesic, 2, 2}},
      {"point_of", {ExprOp::point_of, 1, 1}},
      {"translation_of", {ExprOp::translation_of, 1, 1}},
      {"rotation_of", {ExprOp::rotation_of, 1, 1}},
      {"axis_of", {ExprOp::axis_of, 2, 2}},
  };
  return table;
}

class Parser {
 public:
  explicit Parser(const std::string& src) : lexer_(src) { advance(); }

  ExprPtr parse() {
    ExprPtr e = expression(0);
    if (cur_.kind != Token::Kind::end) {
      throw ParseError("trailing input after expression", cur_.pos);
    }
    return e;
  }

 private:
  void advance() { cur_ = lexer_.next(); }

  void expect(Token::Kind kind, const char* what) {
    if (cur_.kind != kind) {
      throw ParseError(std::string("expected ") + what, cur_.pos);
    }
    advance();
  }

  ExprPtr expression(int depth) {
    if (depth > 128) throw ParseError("expression nests too deeply", cur_.pos);
    if (cur_.kind == Token::Kind::number) {
      auto node = std::make_shared<Expr>();
      node->op = ExprOp::literal;
      node->literal = cur_.number;
      node->pos = cur_.pos;
      advance();
      return node;
    }
    if (cur_.kind != Token::Kind::ident) {
      throw ParseError("expected a number or a function call", cur_.pos);
    }
    const std::string name = cur_.text;
    const std::size_t pos = cur_.pos;
    advance();
    auto it = op_table().find(name);
    if (it == op_table().end()) {
      throw ParseError("unknown function '" + name + "'", pos);
    }
    const OpInfo& info = it->second;
    auto node = std::make_shared<Expr>();
    node->op = info.op;
    node->pos = pos;
    expect(Token::Kind::lparen, "'('");

    if (info.op == ExprOp::rep) {
      if (cur_.kind != Token::Kind::string) {
        throw ParseError("rep() takes a quoted binding name", cur_.pos);
      }
      node->name = cur_.text;
      advance();
      expect(Token::Kind::rparen, "')'");
      return node;
    }

    std::vector<ExprPtr> args;
    if (cur_.kind != Token::Kind::rparen) {
      for (;;) {
        if (info.op == ExprOp::axis_of && args.size() == 1) {
          // Second argument is the axis selector identifier.
          if (cur_.kind != Token::Kind::ident ||
              (cur_.text != "x" && cur_.text != "y" && cur_.text != "z")) {
            throw ParseError("axis_of() selector must be x, y, or z", cur_.pos);
          }
          node->axis = cur_.text == "x" ? 0 : (cur_.text == "y" ? 1 : 2);
          advance();
          args.push_back(nullptr);  // placeholder so arity counts the selector
        } else {
          args.push_back(expression(depth + 1));
        }
        if (cur_.kind == Token::Kind::comma) {
          advance();
          continue;
        }
        break;
      }
    }
    expect(Token::Kind::rparen, "')'");
    const int n = static_cast<int>(args.size());
    if (n < info.min_args || (info.max_args >= 0 && n > info.max_args)) {
      throw ParseError("'" + name + "' called with wrong number of arguments", pos);
    }
    if (info.op == ExprOp::axis_of) args.pop_back();  // drop the selector slot
    node->args = std::move(args);
    return node;
  }

  Lexer lexer_;
  Token cur_;
};

}  // namespace dsl_detail

inline ExprPtr parse_expression(const std::string& source) {
  return dsl_detail::Parser(source).parse();
}

// --- static typing -----------------------------------------------------------

// Declared binding environment: rep name -> representation kind.
using TypeEnv = std::map<std::string, RepKind>;

inline ValueType rep_kind_to_type(RepKind kind, const std::string& name,
                                  std::size_t pos) {
  switch (kind) {
    case RepKind::point: return ValueType::point;
    case RepKind::point_set: return ValueType::point_set;
    case RepKind::vector: return ValueType::vector;
    case RepKind::pose: return ValueType::pose;
    case RepKind::region: return ValueType::region;
    case RepKind::topo_order:
    case RepKind::state_machine_ref:
      throw TypeError("binding '" + name + "' has kind '" +
                      rep_kind_name(kind) +
                      "', which stage programs consume; it cannot appear in a "
                      "cost expression (at offset " + std::to_string(pos) + ")");
  }
  throw Error("unreachable");
}

namespace dsl_detail {

[[noreturn]] inline void type_fail(const Expr& e, const std::string& msg) {
  throw TypeError(msg + " (at offset " + std::to_string(e.pos) + ")");
}

inline bool is_veclike(ValueType t) {
  return t == ValueType::vec || t == ValueType::vector;
}

}  // namespace dsl_detail

inline ValueType typecheck(const Expr& e, const TypeEnv& env) {
  using dsl_detail::is_veclike;
  using dsl_detail::type_fail;
  auto arg = [&](std::size_t i) { return typecheck(*e.args[i], env); };
  switch (e.op) {
    case ExprOp::literal:
      return ValueType::scalar;
    case ExprOp::rep: {
      auto it = env.find(e.name);
      if (it == env.end()) {
        throw TypeError("unknown representation binding '" + e.name +
                        "' (at offset " + std::to_string(e.pos) + ")");
      }
      return rep_kind_to_type(it->second, e.name, e.pos);
    }
    case ExprOp::ee_pos:
      return ValueType::point;
    case ExprOp::ee_rot:
      return ValueType::rot;
    case ExprOp::ee_pose:
      return ValueType::pose;
    case ExprOp::vec:
      for (std::size_t i = 0; i < 3; ++i) {
        if (arg(i) != ValueType::scalar) {
          type_fail(e, "vec() components must be scalars");
        }
      }
      return ValueType::vec;
    case ExprOp::add: {
      const ValueType a = arg(0), b = arg(1);
      if (a == ValueType::scalar && b == ValueType::scalar) return ValueType::scalar;
      if (is_veclike(a) && is_veclike(b)) return ValueType::vec;
      if (a == ValueType::point && is_veclike(b)) return ValueType::point;
      if (is_veclike(a) && b == ValueType::point) return ValueType::point;
      type_fail(e, std::string("cannot add ") + value_type_name(a) + " and " +
                       value_type_name(b));
    }
    case ExprOp::sub: {
      const ValueType a = arg(0), b = arg(1);
      if (a == ValueType::scalar && b == ValueType::scalar) return ValueType::scalar;
      if (a == ValueType::point && b == ValueType::point) return ValueType::vec;
      if (a == ValueType::point && is_veclike(b)) return ValueType::point;
      if (is_veclike(a) && is_veclike(b)) return ValueType::vec;
      type_fail(e, std::string("cannot subtract ") + value_type_name(b) +
                       " from " + value_type_name(a));
    }
    case ExprOp::mul: {
      const ValueType a = arg(0), b = arg(1);
      if (a == ValueType::scalar && b == ValueType::scalar) return ValueType::scalar;
      if (a == ValueType::scalar && is_veclike(b)) return ValueType::vec;
      if (is_veclike(a) && b == ValueType::scalar) return ValueType::vec;
      type_fail(e, std::string("cannot multiply ") + value_type_name(a) +
                       " by " + value_type_name(b));
    }
    case ExprOp::abs:
      if (arg(0) != ValueType::scalar) type_fail(e, "abs() takes a scalar");
      return ValueType::scalar;
    case ExprOp::max:
    case ExprOp::min:
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (arg(i) != ValueType::scalar) {
          type_fail(e, "max()/min() take scalars");
        }
      }
      return ValueType::scalar;
    case ExprOp::norm:
      if (!is_veclike(arg(0))) {
        type_fail(e, std::string("norm() takes a vec, got ") +
                         value_type_name(arg(0)));
      }
      return ValueType::scalar;
    case ExprOp::dot:
      if (!is_veclike(arg(0)) || !is_veclike(arg(1))) {
        type_fail(e, "dot() takes two vecs");
      }
      return ValueType::scalar;
    case ExprOp::cross:
      if (!is_veclike(arg(0)) || !is_veclike(arg(1))) {
        type_fail(e, "cross() takes two vecs");
      }
      return ValueType::vec;
    case ExprOp::angle_between:
      if (!is_veclike(arg(0)) || !is_veclike(arg(1))) {
        type_fail(e, "angle_between() takes two vecs");
      }
      return ValueType::scalar;
    case ExprOp::geodesic:
      if (arg(0) != ValueType::rot || arg(1) != ValueType::rot) {
        type_fail(e, "geodesic() takes two rotations");
      }
      return ValueType::scalar;
    case ExprOp::point_of: {
      const ValueType a = arg(0);
      if (a == ValueType::point || a == ValueType::point_set ||
          a == ValueType::vector || a == ValueType::region ||
          a == ValueType::pose) {
        return ValueType::point;
      }
      type_fail(e, std::string("point_of() cannot take ") + value_type_name(a));
    }
    case ExprOp::translation_of:
      if (arg(0) != ValueType::pose) type_fail(e, "translation_of() takes a pose");
      return ValueType::point;
    case ExprOp::rotation_of:
      if (arg(0) != ValueType::pose) type_fail(e, "rotation_of() takes a pose");
      return ValueType::rot;
    case ExprOp::axis_of: {
      const ValueType a = arg(0);
      if (a != ValueType::pose && a != ValueType::rot) {
        type_fail(e, "axis_of() takes a pose or rotation");
      }
      return ValueType::vec;
    }
  }
  throw Error("unreachable");
}

// --- evaluation --------------------------------------------------------------

struct BoundRep {
  RepresentationValue value;
  bool attached = false;   // captured while held: rides with the candidate ee
  Pose ee_at_extraction;   // ee pose at capture time (attached only)
  std::string tool;        // provenance, for reports
  double captured_at = 0.0;  // sim time of capture
};

struct EvalContext {
  Pose ee;  // candidate end-effector pose
  std::map<std::string, BoundRep> reps;
};

namespace dsl_detail {

using RtVal = std::variant<double, Vec3, Rotation, Pose, VectorValue,
                           PointSetValue, RegionValue>;

inline RepresentationValue attach_transform(const RepresentationValue& v,
                                            const Pose& delta) {
  struct Visitor {
    const Pose& d;
    RepresentationValue operator()(const PointValue& p) const {
      return PointValue{transform_point(d, p.point)};
    }
    RepresentationValue operator()(const PointSetValue& p) const {
      PointSetValue out;
      out.points.reserve(p.points.size());
      for (const auto& pt : p.points) out.points.push_back(transform_point(d, pt));
      return out;
    }
    RepresentationValue operator()(const VectorValue& p) const {
      return VectorValue{transform_point(d, p.origin),
                         UnitVector3(d.rotation.rotate(p.direction.vec()))};
    }
    RepresentationValue operator()(const PoseValue& p) const {
      return PoseValue{pose_compose(d, p.pose)};
    }
    RepresentationValue operator()(const RegionValue& p) const {
      return RegionValue{transform_point(d, p.center), p.half_extent};
    }
    RepresentationValue operator()(const TopoOrderValue& p) const { return p; }
    RepresentationValue operator()(const StateMachineRefValue& p) const { return p; }
  };
  return std::visit(Visitor{delta}, v);
}

inline RtVal rep_to_rt(const RepresentationValue& v, const std::string& name) {
  switch (kind_of(v)) {
    case RepKind::point:
      return std::get<PointValue>(v).point;
    case RepKind::point_set:
      return std::get<PointSetValue>(v);
    case RepKind::vector:
      return std::get<VectorValue>(v);
    case RepKind::pose:
      return std::get<PoseValue>(v).pose;
    case RepKind::region:
      return std::get<RegionValue>(v);
    default:
      throw TypeError("binding '" + name + "' is not usable in expressions");
  }
}

inline Vec3 as_vec(const RtVal& v, const Expr& e) {
  if (std::holds_alternative<Vec3>(v)) return std::get<Vec3>(v);
  if (std::holds_alternative<VectorValue>(v)) {
    return std::get<VectorValue>(v).direction.vec();
  }
  type_fail(e, "expected a vec value");
}

inline double as_scalar(const RtVal& v, const Expr& e) {
  if (std::holds_alternative<double>(v)) return std::get<double>(v);
  type_fail(e, "expected a scalar value");
}

inline Rotation as_rot(const RtVal& v, const Expr& e) {
  if (std::holds_alternative<Rotation>(v)) return std::get<Rotation>(v);
  type_fail(e, "expected a rotation value");
}

inline Pose as_pose(const RtVal& v, const Expr& e) {
  if (std::holds_alternative<Pose>(v)) return std::get<Pose>(v);
  type_fail(e, "expected a pose value");
}

inline RtVal eval_rt(const Expr& e, const EvalContext& ctx) {
  auto arg = [&](std::size_t i) { return eval_rt(*e.args[i], ctx); };
  switch (e.op) {
    case ExprOp::literal:
      return e.literal;
    case ExprOp::rep: {
      auto it = ctx.reps.find(e.name);
      if (it == ctx.reps.end()) {
        throw LookupError("no representation bound for '" + e.name + "'");
      }
      const BoundRep& b = it->second;
      if (!b.attached) return rep_to_rt(b.value, e.name);
      const Pose delta = pose_compose(ctx.ee, pose_inverse(b.ee_at_extraction));
      return rep_to_rt(attach_transform(b.value, delta), e.name);
    }
    case ExprOp::ee_pos:
      return ctx.ee.translation;
    case ExprOp::ee_rot:
      return ctx.ee.rotation;
    case ExprOp::ee_pose:
      return ctx.ee;
    case ExprOp::vec:
      return Vec3{as_scalar(arg(0), e), as_scalar(arg(1), e), as_scalar(arg(2), e)};
    case ExprOp::add: {
      const RtVal a = arg(0), b = arg(1);
      if (std::holds_alternative<double>(a)) {
        return as_scalar(a, e) + as_scalar(b, e);
      }
      return as_vec(a, e) + as_vec(b, e);
    }
    case ExprOp::sub: {
      const RtVal a = arg(0), b = arg(1);
      if (std::holds_alternative<double>(a)) {
        return as_scalar(a, e) - as_scalar(b, e);
      }
      return as_vec(a, e) - as_vec(b, e);
    }
    case ExprOp::mul: {
      const RtVal a = arg(0), b = arg(1);
      if (std::holds_alternative<double>(a) && std::holds_alternative<double>(b)) {
        return std::get<double>(a) * std::get<double>(b);
      }
      if (std::holds_alternative<double>(a)) return as_vec(b, e) * std::get<double>(a);
      return as_vec(a, e) * as_scalar(b, e);
    }
    case ExprOp::abs:
      return std::abs(as_scalar(arg(0), e));
    case ExprOp::max: {
      double m = as_scalar(arg(0), e);
      for (std::size_t i = 1; i < e.args.size(); ++i) {
        m = std::max(m, as_scalar(arg(i), e));
      }
      return m;
    }
    case ExprOp::min: {
      double m = as_scalar(arg(0), e);
      for (std::size_t i = 1; i < e.args.size(); ++i) {
        m = std::min(m, as_scalar(arg(i), e));
      }
      return m;
    }
    case ExprOp::norm:
      return as_vec(arg(0), e).norm();
    case ExprOp::dot:
      return dot(as_vec(arg(0), e), as_vec(arg(1), e));
    case ExprOp::cross:
      return cross(as_vec(arg(0), e), as_vec(arg(1), e));
    case ExprOp::angle_between: {
      const Vec3 a = as_vec(arg(0), e), b = as_vec(arg(1), e);
      const double na = a.norm(), nb = b.norm();
      if (na < 1e-12 || nb < 1e-12) {
        throw Error("angle_between() of a zero vector");
      }
      const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
      return std::acos(c);
    }
    case ExprOp::geodesic:
      return rotation_geodesic(as_rot(arg(0), e), as_rot(arg(1), e));
    case ExprOp::point_of: {
      const RtVal a = arg(0);
      if (std::holds_alternative<Vec3>(a)) return std::get<Vec3>(a);
      if (std::holds_alternative<VectorValue>(a)) {
        return std::get<VectorValue>(a).origin;
      }
      if (std::holds_alternative<PointSetValue>(a)) {
        return centroid(std::get<PointSetValue>(a));
      }
      if (std::holds_alternative<RegionValue>(a)) {
        return std::get<RegionValue>(a).center;
      }
      if (std::holds_alternative<Pose>(a)) return std::get<Pose>(a).translation;
      type_fail(e, "point_of() got an unsupported value");
    }
    case ExprOp::translation_of:
      return as_pose(arg(0), e).translation;
    case ExprOp::rotation_of:
      return as_pose(arg(0), e).rotation;
    case ExprOp::axis_of: {
      const RtVal a = arg(0);
      const Rotation r = std::holds_alternative<Pose>(a)
                             ? std::get<Pose>(a).rotation
                             : as_rot(a, e);
      return r.axis(e.axis);
    }
  }
  throw Error("unreachable");
}

}  // namespace dsl_detail

// --- constraints ---------------------------------------------------------------

enum class ConstraintKind { subgoal, path };

inline const char* constraint_kind_name(ConstraintKind k) {
  return k == ConstraintKind::subgoal ? "subgoal" : "path";
}

inline ConstraintKind constraint_kind_from_name(const std::string& name) {
  if (name == "subgoal") return ConstraintKind::subgoal;
  if (name == "path") return ConstraintKind::path;
  throw ParseError("unknown constraint kind '" + name + "'");
}

struct Constraint {
  std::string id;
  ConstraintKind kind = ConstraintKind::subgoal;
  std::string source;  // expression text as written
  ExprPtr expr;
  double tolerance = 1e-3;  // satisfied when cost <= tolerance
  double weight = 1.0;      // relative weight among path costs
};

// Parses and type-checks one constraint expression against declared bindings.
inline Constraint compile_constraint(const std::string& id, ConstraintKind kind,
                                     const std::string& source,
                                     const TypeEnv& env, double tolerance = 1e-3,
                                     double weight = 1.0) {
  Constraint c;
  c.id = id;
  c.kind = kind;
  c.source = source;
  c.expr = parse_expression(source);
  const ValueType t = typecheck(*c.expr, env);
  if (t != ValueType::scalar) {
    throw TypeError("constraint '" + id + "' must evaluate to a scalar cost, got " +
                    value_type_name(t));
  }
  if (!(tolerance >= 0.0)) {
    throw Error("constraint '" + id + "' tolerance must be >= 0");
  }
  if (!(weight > 0.0)) {
    throw Error("constraint '" + id + "' weight must be > 0");
  }
  c.tolerance = tolerance;
  c.weight = weight;
  return c;
}

inline double evaluate_cost(const Constraint& c, const EvalContext& ctx) {
  const auto v = dsl_detail::eval_rt(*c.expr, ctx);
  const double cost = dsl_detail::as_scalar(v, *c.expr);
  if (!std::isfinite(cost)) {
    throw Error("constraint '" + c.id + "' evaluated to a non-finite cost");
  }
  return cost;
}

inline bool is_satisfied(const Constraint& c, const EvalContext& ctx) {
  return evaluate_cost(c, ctx) <= c.tolerance;
}

// --- differentiation -----------------------------------------------------------

// Tangent parameterization of the candidate pose: dims 0..2 translate, dims
// 3..5 rotate by exp(eps * e_i) applied on the left (world frame).
inline Pose perturb_pose(const Pose& p, int dim, double eps) {
  Pose out = p;
  switch (dim) {
    case 0: out.translation.x += eps; return out;
    case 1: out.translation.y += eps; return out;
    case 2: out.translation.z += eps; return out;
    case 3: return Pose(Rotation::exp({eps, 0, 0}) * p.rotation, p.translation);
    case 4: return Pose(Rotation::exp({0, eps, 0}) * p.rotation, p.translation);
    case 5: return Pose(Rotation::exp({0, 0, eps}) * p.rotation, p.translation);
    default: throw Error("pose tangent dimension must be 0..5");
  }
}

// Central finite differences over the 6-dim tangent.  At non-smooth points
// (max, abs) this returns the average of the one-sided slopes, which is a
// valid subgradient direction for the descent solver.
inline std::array<double, 6> cost_gradient(const Constraint& c,
                                           const EvalContext& ctx,
                                           double h = 1e-5) {
  std::array<double, 6> g{};
  EvalContext probe = ctx;
  for (int dim = 0; dim < 6; ++dim) {
    probe.ee = perturb_pose(ctx.ee, dim, h);
    const double above = evaluate_cost(c, probe);
    probe.ee = perturb_pose(ctx.ee, dim, -h);
    const double below = evaluate_cost(c, probe);
    g[static_cast<std::size_t>(dim)] = (above - below) / (2.0 * h);
  }
  return g;
}

// --- binding declarations and validation ----------------------------------------

struct RepDecl {
  std::string name;
  std::string object_id;
  std::string part;
  RepKind kind = RepKind::point;
  Granularity granularity = Granularity::coarse;
  std::vector<std::string> object_ids;  // topo_order only
};

inline TypeEnv type_env(const std::vector<RepDecl>& decls) {
  TypeEnv env;
  for (const auto& d : decls) env[d.name] = d.kind;
  return env;
}

struct Diagnostic {
  enum class Severity { error, warning };
  Severity severity = Severity::error;
  std::string constraint_id;  // empty for declaration-level issues
  std::string message;
};

}  // namespace trex
