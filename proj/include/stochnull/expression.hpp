#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stochnull/errors.hpp"
#include "stochnull/jet.hpp"

namespace stochnull {

/// Parse failure in an arithmetic expression; `column` is 1-based.
class ExpressionError : public ValidationError {
 public:
  ExpressionError(const std::string& message, int column)
      : ValidationError(message + " at column " + std::to_string(column)), column_(column) {}
  int column() const { return column_; }

 private:
  int column_;
};

/// Arithmetic expression over named variables, evaluable with any scalar type
/// supporting the usual operators and math functions (double, Jet2).
///
/// Grammar: + - * / ^ (right associative), unary minus, parentheses, numbers,
/// variables, named constants, and sin cos tan exp log sqrt abs tanh pow.
class Expression {
 public:
  Expression() : Expression(std::make_shared<Node>(0.0)) {}

  static Expression parse(const std::string& text, const std::vector<std::string>& variables,
                          const std::map<std::string, double>& constants = {}) {
    Parser p{text, variables, constants, 0};
    p.skip();
    if (p.pos >= text.size()) throw ExpressionError("empty expression", 1);
    auto root = p.expr();
    p.skip();
    if (p.pos < text.size())
      throw ExpressionError(std::string("unexpected '") + text[p.pos] + "'",
                            static_cast<int>(p.pos) + 1);
    return Expression(std::move(root));
  }

  /// Whether the expression is free of variables.
  bool is_constant() const { return root_->is_constant(); }

  template <typename T>
  T eval(const std::vector<T>& values) const {
    return root_->template eval<T>(values);
  }

 private:
  enum class Kind { kNumber, kVariable, kNeg, kAdd, kSub, kMul, kDiv, kPow, kCall };

  struct Node {
    explicit Node(double v) : kind(Kind::kNumber), number(v) {}
    Node(Kind k, std::shared_ptr<Node> a, std::shared_ptr<Node> b = nullptr)
        : kind(k), lhs(std::move(a)), rhs(std::move(b)) {}

    Kind kind;
    double number = 0;
    int slot = -1;
    std::string function;
    std::shared_ptr<Node> lhs, rhs;

    bool is_constant() const {
      if (kind == Kind::kVariable) return false;
      if (lhs && !lhs->is_constant()) return false;
      if (rhs && !rhs->is_constant()) return false;
      return true;
    }

    template <typename T>
    T eval(const std::vector<T>& v) const {
      using std::abs, std::cos, std::exp, std::log, std::pow, std::sin, std::sqrt, std::tanh;
      switch (kind) {
        case Kind::kNumber: return T(number);
        case Kind::kVariable: return v[slot];
        case Kind::kNeg: return -lhs->eval(v);
        case Kind::kAdd: return lhs->eval(v) + rhs->eval(v);
        case Kind::kSub: return lhs->eval(v) - rhs->eval(v);
        case Kind::kMul: return lhs->eval(v) * rhs->eval(v);
        case Kind::kDiv: return lhs->eval(v) / rhs->eval(v);
        case Kind::kPow: return pow(lhs->eval(v), rhs->eval(v));
        case Kind::kCall: break;
      }
      const T a = lhs->eval(v);
      if (function == "sin") return sin(a);
      if (function == "cos") return cos(a);
      if (function == "tan") return sin(a) / cos(a);
      if (function == "exp") return exp(a);
      if (function == "log") return log(a);
      if (function == "sqrt") return sqrt(a);
      if (function == "abs") return abs(a);
      if (function == "tanh") return tanh(a);
      return pow(a, rhs->eval(v));  // pow
    }
  };

  struct Parser {
    const std::string& s;
    const std::vector<std::string>& vars;
    const std::map<std::string, double>& constants;
    std::size_t pos;

    int column() const { return static_cast<int>(pos) + 1; }

    void skip() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool accept(char c) {
      skip();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    std::shared_ptr<Node> expr() {
      auto lhs = term();
      for (;;) {
        if (accept('+'))
          lhs = std::make_shared<Node>(Kind::kAdd, lhs, term());
        else if (accept('-'))
          lhs = std::make_shared<Node>(Kind::kSub, lhs, term());
        else
          return lhs;
      }
    }

    std::shared_ptr<Node> term() {
      auto lhs = unary();
      for (;;) {
        if (accept('*'))
          lhs = std::make_shared<Node>(Kind::kMul, lhs, unary());
        else if (accept('/'))
          lhs = std::make_shared<Node>(Kind::kDiv, lhs, unary());
        else
          return lhs;
      }
    }

    std::shared_ptr<Node> unary() {
      if (accept('-')) return std::make_shared<Node>(Kind::kNeg, unary());
      if (accept('+')) return unary();
      return power();
    }

    std::shared_ptr<Node> power() {
      auto base = primary();
      if (accept('^')) return std::make_shared<Node>(Kind::kPow, base, unary());
      return base;
    }

    std::shared_ptr<Node> primary() {
      skip();
      if (pos >= s.size()) throw ExpressionError("unexpected end of expression", column());
      const char c = s[pos];
      if (accept('(')) {
        auto inner = expr();
        if (!accept(')')) throw ExpressionError("expected ')'", column());
        return inner;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = s.c_str() + pos;
        char* end = nullptr;
        const double value = std::strtod(begin, &end);
        if (end == begin) throw ExpressionError("malformed number", column());
        pos += static_cast<std::size_t>(end - begin);
        return std::make_shared<Node>(value);
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos;
        while (pos < s.size() &&
               (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
          ++pos;
        const std::string name = s.substr(start, pos - start);
        skip();
        if (pos < s.size() && s[pos] == '(') return call(name, static_cast<int>(start) + 1);
        for (std::size_t i = 0; i < vars.size(); ++i) {
          if (vars[i] == name) {
            auto node = std::make_shared<Node>(Kind::kVariable, nullptr);
            node->slot = static_cast<int>(i);
            return node;
          }
        }
        if (auto it = constants.find(name); it != constants.end())
          return std::make_shared<Node>(it->second);
        throw ExpressionError("unknown identifier '" + name + "'", static_cast<int>(start) + 1);
      }
      throw ExpressionError(std::string("unexpected '") + c + "'", column());
    }

    std::shared_ptr<Node> call(const std::string& name, int name_column) {
      static const char* unary_functions[] = {"sin", "cos", "tan", "exp", "log",
                                              "sqrt", "abs", "tanh"};
      bool known = name == "pow";
      for (const char* f : unary_functions) known = known || name == f;
      if (!known) throw ExpressionError("unknown function '" + name + "'", name_column);
      accept('(');
      auto node = std::make_shared<Node>(Kind::kCall, expr());
      node->function = name;
      if (name == "pow") {
        if (!accept(',')) throw ExpressionError("pow expects two arguments", column());
        node->rhs = expr();
      }
      if (!accept(')')) throw ExpressionError("expected ')'", column());
      return node;
    }
  };

  explicit Expression(std::shared_ptr<Node> root) : root_(std::move(root)) {}

  std::shared_ptr<const Node> root_;
};

/// Deterministic scalar field c(t, x), evaluable for values and for second-order jets.
class ScalarField {
 public:
  ScalarField() : ScalarField(0.0) {}
  ScalarField(double constant)  // NOLINT: constants convert implicitly
      : constant_(true), value_(constant) {}

  /// Parses an expression in the variables t and x; pi and e are predefined.
  static ScalarField parse(const std::string& text,
                           const std::map<std::string, double>& constants = {}) {
    std::map<std::string, double> named{{"pi", M_PI}, {"e", M_E}};
    for (const auto& [k, v] : constants) named[k] = v;
    ScalarField f;
    f.expr_ = Expression::parse(text, {"t", "x"}, named);
    f.constant_ = f.expr_.is_constant();
    f.value_ = f.constant_ ? f.expr_.eval<double>({0.0, 0.0}) : 0.0;
    return f;
  }

  bool is_constant() const { return constant_; }

  double operator()(double t, double x) const {
    if (constant_) return value_;
    return expr_.eval<double>({t, x});
  }

  Jet2 jet(double t, double x) const {
    if (constant_) return Jet2(value_);
    return expr_.eval<Jet2>({Jet2::variable_t(t), Jet2::variable_x(x)});
  }

 private:
  bool constant_ = true;
  Expression expr_;
  double value_ = 0.0;
};

}  // namespace stochnull
