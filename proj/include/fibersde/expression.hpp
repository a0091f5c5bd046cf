// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fibersde {

class ExpressionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Arithmetic expressions over named variables, compiled once and evaluated
// many times. Supports + - * / ^, unary minus, parentheses and the usual
// elementary functions.
class Expression {
public:
  Expression() = default;

  Expression(std::string_view text, std::vector<std::string> variables)
      : text_(text), variables_(std::move(variables)) {
    Parser p{text_, variables_, 0};
    root_ = p.parse_expression();
    p.skip_space();
    if (p.pos != text_.size()) p.fail("unexpected '" + std::string(1, text_[p.pos]) + "'");
  }

  const std::string& text() const { return text_; }
  const std::vector<std::string>& variables() const { return variables_; }
  bool empty() const { return !root_; }

  double operator()(const double* values) const { return root_ ? root_->eval(values) : 0.0; }
  double operator()(std::initializer_list<double> values) const { return (*this)(values.begin()); }

  bool uses(const std::string& name) const {
    for (std::size_t i = 0; i < variables_.size(); ++i) {
      if (variables_[i] == name) return root_ && root_->uses(static_cast<int>(i));
    }
    return false;
  }

private:
  struct Node {
    virtual ~Node() = default;
    virtual double eval(const double* v) const = 0;
    virtual bool uses(int) const { return false; }
  };
  using NodePtr = std::shared_ptr<const Node>;

  struct Constant : Node {
    double value;
    explicit Constant(double x) : value(x) {}
    double eval(const double*) const override { return value; }
  };

  struct Variable : Node {
    int index;
    explicit Variable(int i) : index(i) {}
    double eval(const double* v) const override { return v[index]; }
    bool uses(int i) const override { return i == index; }
  };

  struct Unary : Node {
    double (*fn)(double);
    NodePtr arg;
    Unary(double (*f)(double), NodePtr a) : fn(f), arg(std::move(a)) {}
    double eval(const double* v) const override { return fn(arg->eval(v)); }
    bool uses(int i) const override { return arg->uses(i); }
  };

  struct Binary : Node {
    char op;
    NodePtr lhs, rhs;
    Binary(char o, NodePtr a, NodePtr b) : op(o), lhs(std::move(a)), rhs(std::move(b)) {}
    double eval(const double* v) const override {
      const double a = lhs->eval(v), b = rhs->eval(v);
      switch (op) {
        case '+': return a + b;
        case '-': return a - b;
        case '*': return a * b;
        case '/': return a / b;
        case '^': return std::pow(a, b);
        case '<': return std::min(a, b);
        case '>': return std::max(a, b);
      }
      return 0.0;
    }
    bool uses(int i) const override { return lhs->uses(i) || rhs->uses(i); }
  };

  struct Parser {
    const std::string& s;
    const std::vector<std::string>& vars;
    std::size_t pos;

    [[noreturn]] void fail(const std::string& msg) const {
      throw ExpressionError("expression '" + s + "' at position " + std::to_string(pos + 1) + ": " + msg);
    }

    void skip_space() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool accept(char c) {
      skip_space();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    NodePtr parse_expression() {
      NodePtr lhs = parse_term();
      for (;;) {
        if (accept('+')) lhs = std::make_shared<Binary>('+', lhs, parse_term());
        else if (accept('-')) lhs = std::make_shared<Binary>('-', lhs, parse_term());
        else return lhs;
      }
    }

    NodePtr parse_term() {
      NodePtr lhs = parse_unary();
      for (;;) {
        if (accept('*')) lhs = std::make_shared<Binary>('*', lhs, parse_unary());
        else if (accept('/')) lhs = std::make_shared<Binary>('/', lhs, parse_unary());
        else return lhs;
      }
    }

    NodePtr parse_unary() {
      if (accept('-')) return std::make_shared<Unary>([](double x) { return -x; }, parse_unary());
      if (accept('+')) return parse_unary();
      return parse_power();
    }

    NodePtr parse_power() {
      NodePtr base = parse_primary();
      if (accept('^')) return std::make_shared<Binary>('^', base, parse_unary());
      return base;
    }

    NodePtr parse_primary() {
      skip_space();
      if (pos >= s.size()) fail("unexpected end of input");
      const char c = s[pos];
      if (c == '(') {
        ++pos;
        NodePtr inner = parse_expression();
        if (!accept(')')) fail("expected ')'");
        return inner;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = s.c_str() + pos;
        char* end = nullptr;
        const double value = std::strtod(begin, &end);
        if (end == begin) fail("malformed number");
        pos += static_cast<std::size_t>(end - begin);
        return std::make_shared<Constant>(value);
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos;
        while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
        const std::string name = s.substr(start, pos - start);
        if (accept('(')) return parse_call(name);
        for (std::size_t i = 0; i < vars.size(); ++i) {
          if (vars[i] == name) return std::make_shared<Variable>(static_cast<int>(i));
        }
        if (name == "pi") return std::make_shared<Constant>(3.14159265358979323846);
        if (name == "e") return std::make_shared<Constant>(2.71828182845904523536);
        pos = start;
        fail("unknown variable '" + name + "'");
      }
      fail("unexpected '" + std::string(1, c) + "'");
    }

    NodePtr parse_call(const std::string& name) {
      std::vector<NodePtr> args;
      if (!accept(')')) {
        do {
          args.push_back(parse_expression());
        } while (accept(','));
        if (!accept(')')) fail("expected ')' after arguments of " + name);
      }
      using Fn = double (*)(double);
      struct Entry {
        const char* name;
        Fn fn;
      };
      static const Entry unary[] = {
          {"sin", [](double x) { return std::sin(x); }},   {"cos", [](double x) { return std::cos(x); }},
          {"tan", [](double x) { return std::tan(x); }},   {"exp", [](double x) { return std::exp(x); }},
          {"log", [](double x) { return std::log(x); }},   {"sqrt", [](double x) { return std::sqrt(x); }},
          {"abs", [](double x) { return std::abs(x); }},   {"sinh", [](double x) { return std::sinh(x); }},
          {"cosh", [](double x) { return std::cosh(x); }}, {"tanh", [](double x) { return std::tanh(x); }},
      };
      for (const auto& e : unary) {
        if (name == e.name) {
          if (args.size() != 1) fail(name + " takes one argument");
          return std::make_shared<Unary>(e.fn, args[0]);
        }
      }
      const char op = name == "pow" ? '^' : name == "min" ? '<' : name == "max" ? '>' : '\0';
      if (op != '\0') {
        if (args.size() != 2) fail(name + " takes two arguments");
        return std::make_shared<Binary>(op, args[0], args[1]);
      }
      fail("unknown function '" + name + "'");
    }
  };

  std::string text_;
  std::vector<std::string> variables_;
  NodePtr root_;
};

}  // namespace fibersde
