#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <sstream>

#include "hpo/tasks.hpp"

namespace hpo {

// ---------------------------------------------------------------------------
// Rational

namespace {

__extension__ using Wide = __int128;

std::optional<Rational> make_rational(Wide num, Wide den) {
  if (den == 0) return std::nullopt;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  Wide a = num < 0 ? -num : num;
  Wide b = den;
  while (b != 0) {
    const Wide t = a % b;
    a = b;
    b = t;
  }
  if (a > 1) {
    num /= a;
    den /= a;
  }
  constexpr Wide kMax = std::numeric_limits<std::int64_t>::max();
  if (num > kMax || num < -kMax || den > kMax) return std::nullopt;
  return Rational(static_cast<std::int64_t>(num), static_cast<std::int64_t>(den));
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
  if (den_ == 0) throw Error("rational: zero denominator");
  if (den_ < 0) {
    num_ = -num_;
    den_ = -den_;
  }
  const std::int64_t g = std::gcd(num_, den_);
  if (g > 1) {
    num_ /= g;
    den_ /= g;
  }
}

std::optional<Rational> add(Rational a, Rational b) {
  return make_rational(static_cast<Wide>(a.num_) * b.den_ + static_cast<Wide>(b.num_) * a.den_,
                       static_cast<Wide>(a.den_) * b.den_);
}

std::optional<Rational> sub(Rational a, Rational b) {
  return make_rational(static_cast<Wide>(a.num_) * b.den_ - static_cast<Wide>(b.num_) * a.den_,
                       static_cast<Wide>(a.den_) * b.den_);
}

std::optional<Rational> mul(Rational a, Rational b) {
  return make_rational(static_cast<Wide>(a.num_) * b.num_,
                       static_cast<Wide>(a.den_) * b.den_);
}

std::optional<Rational> div(Rational a, Rational b) {
  if (b.num_ == 0) return std::nullopt;
  return make_rational(static_cast<Wide>(a.num_) * b.den_,
                       static_cast<Wide>(a.den_) * b.num_);
}

// ---------------------------------------------------------------------------
// Parsing

std::optional<std::string> parse_boxed(std::string_view text) {
  constexpr std::string_view kOpen = "\\boxed{";
  const auto start = text.rfind(kOpen);
  if (start == std::string_view::npos) return std::nullopt;
  int depth = 1;
  const std::size_t body = start + kOpen.size();
  for (std::size_t k = body; k < text.size(); ++k) {
    if (text[k] == '{') {
      ++depth;
    } else if (text[k] == '}') {
      if (--depth == 0) return std::string(text.substr(body, k - body));
    }
  }
  return std::nullopt;
}

namespace {

// Recursive-descent evaluator:
//   expr   := term (('+' | '-') term)*
//   term   := factor (('*' | '/') factor)*
//   factor := integer | '(' expr ')'
class ExpressionParser {
 public:
  ExpressionParser(std::string_view text, bool integer_division_only)
      : text_(text), integer_division_only_(integer_division_only) {}

  std::optional<ParsedExpression> run() {
    auto v = expr(0);
    skip_space();
    if (!v || pos_ != text_.size()) return std::nullopt;
    return ParsedExpression{*v, std::move(numbers_)};
  }

 private:
  static constexpr int kMaxDepth = 64;

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::optional<Rational> expr(int depth) {
    auto lhs = term(depth);
    while (lhs) {
      if (accept('+')) {
        auto rhs = term(depth);
        lhs = rhs ? add(*lhs, *rhs) : std::nullopt;
      } else if (accept('-')) {
        auto rhs = term(depth);
        lhs = rhs ? sub(*lhs, *rhs) : std::nullopt;
      } else {
        break;
      }
    }
    return lhs;
  }

  std::optional<Rational> term(int depth) {
    auto lhs = factor(depth);
    while (lhs) {
      if (accept('*')) {
        auto rhs = factor(depth);
        lhs = rhs ? mul(*lhs, *rhs) : std::nullopt;
      } else if (accept('/')) {
        auto rhs = factor(depth);
        if (!rhs) return std::nullopt;
        auto q = div(*lhs, *rhs);
        if (q && integer_division_only_ && !q->is_integer()) return std::nullopt;
        lhs = q;
      } else {
        break;
      }
    }
    return lhs;
  }

  std::optional<Rational> factor(int depth) {
    if (depth > kMaxDepth) return std::nullopt;
    if (accept('(')) {
      auto v = expr(depth + 1);
      if (!v || !accept(')')) return std::nullopt;
      return v;
    }
    skip_space();
    const std::size_t begin = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == begin || pos_ - begin > 12) return std::nullopt;
    std::int64_t value = 0;
    std::from_chars(text_.data() + begin, text_.data() + pos_, value);
    numbers_.push_back(value);
    return Rational(value);
  }

  std::string_view text_;
  bool integer_division_only_;
  std::size_t pos_ = 0;
  std::vector<std::int64_t> numbers_;
};

}  // namespace

std::optional<ParsedExpression> evaluate_expression(std::string_view text,
                                                    bool integer_division_only) {
  return ExpressionParser(text, integer_division_only).run();
}

// ---------------------------------------------------------------------------
// Countdown

namespace countdown_vocab {

std::string_view symbol(std::uint32_t token) {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> t = {"", "\\boxed{", "}", "(", ")", "+", "-", "*", "/"};
    for (std::uint32_t n = 1; n <= kMaxNumber; ++n) t.push_back(std::to_string(n));
    return t;
  }();
  if (token >= table.size()) throw Error("countdown: token id " + std::to_string(token) + " outside vocabulary");
  return table[token];
}

}  // namespace countdown_vocab

std::string render_countdown(const std::vector<Token>& tokens) {
  std::string out;
  for (Token t : tokens) {
    if (t.id == countdown_vocab::kEos) break;
    out += countdown_vocab::symbol(t.id);
  }
  return out;
}

double countdown_reward(const CountdownInstance& instance, std::string_view response_text,
                        bool integer_division_only) {
  const auto boxed = parse_boxed(response_text);
  if (!boxed) return 0.0;
  const auto parsed = evaluate_expression(*boxed, integer_division_only);
  if (!parsed) return 0.0;
  auto used = parsed->numbers;
  auto given = instance.numbers;
  std::sort(used.begin(), used.end());
  std::sort(given.begin(), given.end());
  if (used != given) return 0.0;
  return parsed->value == Rational(instance.target) ? 1.0 : 0.0;
}

namespace {

struct Term {
  Rational value;
  std::string text;
};

// Combines every pair of remaining terms with every operator until one term
// is left. Returns true as soon as a solution is found when stop_at_first.
bool search(std::vector<Term>& terms, const Rational& target, bool integer_only,
            bool stop_at_first, std::set<std::string>* solutions) {
  if (terms.size() == 1) {
    if (terms.front().value == target) {
      if (solutions) solutions->insert(terms.front().text);
      return true;
    }
    return false;
  }
  bool found = false;
  for (std::size_t a = 0; a < terms.size(); ++a) {
    for (std::size_t b = a + 1; b < terms.size(); ++b) {
      const Term x = terms[a];
      const Term y = terms[b];
      std::vector<Term> rest;
      rest.reserve(terms.size() - 1);
      for (std::size_t k = 0; k < terms.size(); ++k) {
        if (k != a && k != b) rest.push_back(terms[k]);
      }
      auto wrap = [](const std::string& l, char op, const std::string& r) {
        return "(" + l + op + r + ")";
      };
      std::vector<Term> candidates;
      if (auto v = add(x.value, y.value)) candidates.push_back({*v, wrap(x.text, '+', y.text)});
      if (auto v = sub(x.value, y.value)) candidates.push_back({*v, wrap(x.text, '-', y.text)});
      if (auto v = sub(y.value, x.value)) candidates.push_back({*v, wrap(y.text, '-', x.text)});
      if (auto v = mul(x.value, y.value)) candidates.push_back({*v, wrap(x.text, '*', y.text)});
      if (auto v = div(x.value, y.value); v && (!integer_only || v->is_integer())) {
        candidates.push_back({*v, wrap(x.text, '/', y.text)});
      }
      if (auto v = div(y.value, x.value); v && (!integer_only || v->is_integer())) {
        candidates.push_back({*v, wrap(y.text, '/', x.text)});
      }
      for (auto& c : candidates) {
        rest.push_back(std::move(c));
        if (search(rest, target, integer_only, stop_at_first, solutions)) {
          found = true;
          if (stop_at_first) return true;
        }
        rest.pop_back();
      }
    }
  }
  return found;
}

std::vector<Term> leaves(const std::vector<std::int64_t>& numbers) {
  std::vector<Term> terms;
  for (auto n : numbers) terms.push_back({Rational(n), std::to_string(n)});
  return terms;
}

}  // namespace

std::vector<std::string> solve_countdown(const std::vector<std::int64_t>& numbers,
                                         std::int64_t target, bool integer_division_only) {
  if (numbers.empty()) return {};
  std::set<std::string> found;
  auto terms = leaves(numbers);
  search(terms, Rational(target), integer_division_only, false, &found);
  return {found.begin(), found.end()};
}

bool countdown_solvable(const std::vector<std::int64_t>& numbers, std::int64_t target,
                        bool integer_division_only) {
  if (numbers.empty()) return false;
  auto terms = leaves(numbers);
  return search(terms, Rational(target), integer_division_only, true, nullptr);
}

std::vector<CountdownInstance> generate_countdown_dataset(std::uint32_t count,
                                                          const CountdownGenerator& gen,
                                                          std::uint64_t seed) {
  if (count < 1) throw Error("countdown dataset: count must be at least 1");
  if (gen.num_numbers != 3 && gen.num_numbers != 4) {
    throw Error("countdown dataset: num_numbers must be 3 or 4");
  }
  if (gen.number_max < 1 || gen.number_max > countdown_vocab::kMaxNumber) {
    throw Error("countdown dataset: number_max must lie in [1, 20]");
  }
  if (gen.target_max < 1) throw Error("countdown dataset: target_max must be positive");
  std::vector<CountdownInstance> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    RngStream rng(seed, RngDomain::dataset, k);
    CountdownInstance inst;
    inst.prompt_id = k;
    do {
      inst.numbers.clear();
      for (std::uint32_t m = 0; m < gen.num_numbers; ++m) {
        inst.numbers.push_back(1 + static_cast<std::int64_t>(
                                       rng.below(static_cast<std::uint64_t>(gen.number_max))));
      }
      inst.target =
          1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(gen.target_max)));
    } while (!countdown_solvable(inst.numbers, inst.target, gen.integer_division_only));
    out.push_back(std::move(inst));
  }
  return out;
}

void write_countdown_dataset(std::ostream& os, const std::vector<CountdownInstance>& data) {
  for (const auto& inst : data) {
    os << inst.prompt_id << '\t';
    for (std::size_t k = 0; k < inst.numbers.size(); ++k) {
      if (k) os << ',';
      os << inst.numbers[k];
    }
    os << '\t' << inst.target << '\n';
  }
}

std::vector<CountdownInstance> read_countdown_dataset(std::istream& is) {
  std::vector<CountdownInstance> out;
  std::string line;
  std::size_t line_no = 0;
  auto parse_int = [&](std::string_view s) {
    std::int64_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
      throw Error("dataset line " + std::to_string(line_no) + ": bad integer '" +
                  std::string(s) + "'");
    }
    return v;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw Error("dataset line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    const std::string_view view(line);
    CountdownInstance inst;
    inst.prompt_id = parse_int(view.substr(0, t1));
    const auto nums = view.substr(t1 + 1, t2 - t1 - 1);
    std::size_t start = 0;
    while (true) {
      const auto comma = nums.find(',', start);
      inst.numbers.push_back(parse_int(nums.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    inst.target = parse_int(view.substr(t2 + 1));
    for (auto n : inst.numbers) {
      if (n < 1 || n > countdown_vocab::kMaxNumber) {
        throw Error("dataset line " + std::to_string(line_no) + ": number " + std::to_string(n) +
                    " outside [1, 20]");
      }
    }
    if (inst.numbers.size() != 3 && inst.numbers.size() != 4) {
      throw Error("dataset line " + std::to_string(line_no) + ": expected 3 or 4 numbers");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

void save_countdown_dataset(const std::string& path, const std::vector<CountdownInstance>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open dataset for writing: " + path);
  write_countdown_dataset(os, data);
  if (!os) throw Error("failed writing dataset: " + path);
}

std::vector<CountdownInstance> load_countdown_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset: " + path);
  try {
    return read_countdown_dataset(is);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CountdownTask

CountdownTask::CountdownTask(std::vector<CountdownInstance> instances, bool integer_division_only)
    : instances_(std::move(instances)), integer_division_only_(integer_division_only) {
  if (instances_.empty()) throw Error("countdown task: empty dataset");
  for (std::size_t k = 0; k < instances_.size(); ++k) {
    if (instances_[k].prompt_id != static_cast<PromptId>(k)) {
      throw Error("countdown task: prompt ids must be 0..n-1 in order (line " +
                  std::to_string(k + 1) + " has " + std::to_string(instances_[k].prompt_id) + ")");
    }
  }
}

std::uint32_t CountdownTask::num_prompts() const {
  return static_cast<std::uint32_t>(instances_.size());
}

const CountdownInstance& CountdownTask::instance(PromptId prompt) const {
  if (prompt < 0 || prompt >= static_cast<PromptId>(instances_.size())) {
    throw Error("countdown task: unknown prompt id " + std::to_string(prompt));
  }
  return instances_[static_cast<std::size_t>(prompt)];
}

std::string CountdownTask::answer(PromptId prompt) const {
  return std::to_string(instance(prompt).target);
}

void CountdownTask::init_policy(TabularPolicy& policy, double prior_strength) const {
  namespace cv = countdown_vocab;
  const auto& shape = policy.shape();
  if (shape.vocab_size != cv::kSize) throw Error("countdown task: policy vocabulary mismatch");
  const std::uint32_t ops[] = {cv::kPlus, cv::kMinus, cv::kTimes, cv::kDivide};
  for (std::uint32_t p = 0; p < shape.num_prompts; ++p) {
    const auto& inst = instance(p);
    auto favor_numbers = [&](std::span<double> row) {
      for (auto n : inst.numbers) row[cv::number_token(n)] = prior_strength;
    };
    auto favor_ops = [&](std::span<double> row) {
      for (auto op : ops) row[op] = prior_strength;
    };
    for (std::uint32_t c = 0; c < shape.num_contexts(); ++c) {
      auto row = policy.row(p, c);
      std::fill(row.begin(), row.end(), 0.0);
      if (shape.conditioning == PolicyConditioning::position) {
        // Template: \boxed{ n op n op ... n } <eos>
        const std::uint32_t close_pos = 2 * static_cast<std::uint32_t>(inst.numbers.size());
        if (c == 0) {
          row[cv::kBoxOpen] = prior_strength;
        } else if (c < close_pos) {
          (c % 2 == 1) ? favor_numbers(row) : favor_ops(row);
        } else if (c == close_pos) {
          row[cv::kBoxClose] = prior_strength;
        } else {
          row[cv::kEos] = prior_strength;
        }
      } else {
        // Context is the previous token id, or vocab_size at the start.
        if (c == shape.vocab_size) {
          row[cv::kBoxOpen] = prior_strength;
        } else if (c == cv::kBoxOpen || c == cv::kLParen ||
                   (c >= cv::kPlus && c <= cv::kDivide)) {
          favor_numbers(row);
        } else if (c >= cv::kFirstNumber || c == cv::kRParen) {
          favor_ops(row);
          row[cv::kBoxClose] = prior_strength;
        } else {
          row[cv::kEos] = prior_strength;
        }
      }
    }
  }
}

double CountdownTask::reward(PromptId prompt, const Trajectory& response, std::uint64_t,
                             RngStream&) const {
  return countdown_reward(instance(prompt), render_countdown(response.tokens()),
                          integer_division_only_);
}

}  // namespace hpo
