#include "doge/error.hpp"
#include "doge/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace doge {

namespace {

enum class Section { none, objective, constraints, binary, end };

enum class TokKind { number, ident, plus, minus, colon, relation };

struct Token {
    TokKind kind;
    std::string text;
    double value = 0.0;
    std::size_t line = 0;
};

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg)
{
    throw ParseError("lp:" + std::to_string(line) + ": " + msg);
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '[' || c == ']' || c == '#';
}

void tokenize(std::string_view s, std::size_t line, std::vector<Token>& out)
{
    std::size_t p = 0;
    while (p < s.size()) {
        const char c = s[p];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++p;
        } else if (c == '+') {
            out.push_back({TokKind::plus, "+", 0.0, line});
            ++p;
        } else if (c == '-') {
            out.push_back({TokKind::minus, "-", 0.0, line});
            ++p;
        } else if (c == ':') {
            out.push_back({TokKind::colon, ":", 0.0, line});
            ++p;
        } else if (c == '<' || c == '>' || c == '=') {
            std::size_t q = p + 1;
            if (q < s.size() && (s[q] == '<' || s[q] == '>' || s[q] == '=')) ++q;
            out.push_back({TokKind::relation, std::string(s.substr(p, q - p)), 0.0, line});
            p = q;
        } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t q = p;
            while (q < s.size() && (std::isdigit(static_cast<unsigned char>(s[q])) || s[q] == '.')) ++q;
            if (q < s.size() && (s[q] == 'e' || s[q] == 'E')) {
                std::size_t r = q + 1;
                if (r < s.size() && (s[r] == '+' || s[r] == '-')) ++r;
                if (r < s.size() && std::isdigit(static_cast<unsigned char>(s[r]))) {
                    q = r;
                    while (q < s.size() && std::isdigit(static_cast<unsigned char>(s[q]))) ++q;
                }
            }
            Token t{TokKind::number, std::string(s.substr(p, q - p)), 0.0, line};
            const auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.value);
            if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) fail(line, "bad number '" + t.text + "'");
            out.push_back(std::move(t));
            p = q;
        } else if (ident_start(c)) {
            std::size_t q = p;
            while (q < s.size() && ident_char(s[q])) ++q;
            out.push_back({TokKind::ident, std::string(s.substr(p, q - p)), 0.0, line});
            p = q;
        } else {
            fail(line, std::string("unexpected character '") + c + "'");
        }
    }
}

// Returns the section a line opens and the length of the keyword, if any.
std::optional<std::pair<Section, std::size_t>> section_keyword(std::string_view trimmed, std::size_t line)
{
    const auto low = lower(trimmed);
    auto word_end = low.find_first_of(" \t");
    const std::string first = low.substr(0, word_end);
    if (low.rfind("subject to", 0) == 0) return std::pair{Section::constraints, std::size_t{10}};
    if (low.rfind("such that", 0) == 0) return std::pair{Section::constraints, std::size_t{9}};
    static const std::unordered_map<std::string, Section> words = {
        {"minimize", Section::objective}, {"minimise", Section::objective}, {"minimum", Section::objective},
        {"min", Section::objective},      {"maximize", Section::objective}, {"maximise", Section::objective},
        {"maximum", Section::objective},  {"max", Section::objective},      {"st", Section::constraints},
        {"s.t.", Section::constraints},   {"st.", Section::constraints},    {"binary", Section::binary},
        {"binaries", Section::binary},    {"bin", Section::binary},         {"end", Section::end}};
    if (auto it = words.find(first); it != words.end()) return std::pair{it->second, first.size()};
    static const std::unordered_set<std::string> unsupported = {
        "bounds", "bound", "general", "generals", "gen", "integer", "integers", "semi-continuous", "semis", "semi", "sos"};
    if (unsupported.count(first)) fail(line, "unsupported section '" + std::string(trimmed.substr(0, first.size())) + "'");
    return std::nullopt;
}

class Builder {
public:
    std::uint32_t var(const std::string& name)
    {
        auto [it, inserted] = index_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
        if (inserted) names_.push_back(name);
        return it->second;
    }
    std::vector<std::string>& names() { return names_; }
    std::size_t size() const { return names_.size(); }

private:
    std::unordered_map<std::string, std::uint32_t> index_;
    std::vector<std::string> names_;
};

struct Term {
    double coeff;
    std::string name;
    std::size_t line;
};

// Parses [label:] term* starting at pos; stops at a relation or end.
std::vector<Term> parse_terms(const std::vector<Token>& toks, std::size_t& pos)
{
    if (pos + 1 < toks.size() && toks[pos].kind == TokKind::ident && toks[pos + 1].kind == TokKind::colon) pos += 2;
    std::vector<Term> terms;
    while (pos < toks.size() && toks[pos].kind != TokKind::relation) {
        const auto line = toks[pos].line;
        double sign = 1.0;
        bool had_sign = false;
        while (pos < toks.size() && (toks[pos].kind == TokKind::plus || toks[pos].kind == TokKind::minus)) {
            if (toks[pos].kind == TokKind::minus) sign = -sign;
            had_sign = true;
            ++pos;
        }
        if (!had_sign && !terms.empty()) fail(line, "expected '+' or '-' between terms");
        double coeff = 1.0;
        if (pos < toks.size() && toks[pos].kind == TokKind::number) {
            coeff = toks[pos].value;
            ++pos;
        }
        if (pos >= toks.size() || toks[pos].kind != TokKind::ident) {
            if (pos < toks.size() && toks[pos].kind == TokKind::colon) fail(line, "unexpected ':'");
            fail(line, "constant terms are not supported");
        }
        terms.push_back({sign * coeff, toks[pos].text, toks[pos].line});
        ++pos;
    }
    return terms;
}

bool default_names(const std::vector<std::string>& names)
{
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] != "x" + std::to_string(i + 1)) return false;
    return true;
}

std::string fmt_number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

IlpInstance parse_lp(std::string_view text)
{
    std::vector<Token> objective_toks, constraint_toks;
    std::vector<std::pair<std::string, std::size_t>> binary_names;
    Section section = Section::none;
    bool maximize = false;
    bool saw_objective = false;

    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size() && section != Section::end) {
        auto stop = text.find('\n', start);
        if (stop == std::string_view::npos) stop = text.size();
        std::string_view line = text.substr(start, stop - start);
        start = stop + 1;
        ++line_no;
        if (auto c = line.find('\\'); c != std::string_view::npos) line = line.substr(0, c);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string_view::npos) {
            if (stop == text.size()) break;
            continue;
        }
        line = line.substr(b);
        line = line.substr(0, line.find_last_not_of(" \t\r") + 1);

        if (auto kw = section_keyword(line, line_no)) {
            section = kw->first;
            if (section == Section::objective) {
                if (saw_objective) fail(line_no, "second objective section");
                saw_objective = true;
                maximize = lower(line.substr(0, 3)) == "max";
            }
            line = line.substr(kw->second);
        }
        switch (section) {
        case Section::none:
            fail(line_no, "content before the first section");
        case Section::objective:
            tokenize(line, line_no, objective_toks);
            break;
        case Section::constraints:
            tokenize(line, line_no, constraint_toks);
            break;
        case Section::binary: {
            std::vector<Token> toks;
            tokenize(line, line_no, toks);
            for (const auto& t : toks) {
                if (t.kind != TokKind::ident) fail(line_no, "expected variable names in Binary section");
                binary_names.emplace_back(t.text, line_no);
            }
            break;
        }
        case Section::end:
            break;
        }
        if (stop == text.size()) break;
    }
    if (!saw_objective) fail(line_no, "missing objective section");

    Builder vars;
    std::vector<std::pair<std::uint32_t, double>> obj_terms;
    {
        std::size_t pos = 0;
        for (auto& t : parse_terms(objective_toks, pos)) obj_terms.emplace_back(vars.var(t.name), t.coeff);
        if (pos != objective_toks.size()) fail(objective_toks[pos].line, "relation in objective");
    }

    std::vector<Constraint> rows;
    std::vector<std::size_t> row_lines;
    {
        std::size_t pos = 0;
        while (pos < constraint_toks.size()) {
            const auto line = constraint_toks[pos].line;
            auto terms = parse_terms(constraint_toks, pos);
            if (pos >= constraint_toks.size()) fail(line, "constraint without relation");
            const auto rel_tok = constraint_toks[pos++];
            double sign = 1.0;
            while (pos < constraint_toks.size() &&
                   (constraint_toks[pos].kind == TokKind::plus || constraint_toks[pos].kind == TokKind::minus)) {
                if (constraint_toks[pos].kind == TokKind::minus) sign = -sign;
                ++pos;
            }
            if (pos >= constraint_toks.size() || constraint_toks[pos].kind != TokKind::number)
                fail(rel_tok.line, "expected numeric right-hand side");
            const double rhs = sign * constraint_toks[pos++].value;

            Constraint row;
            double flip = 1.0;
            const auto& r = rel_tok.text;
            if (r == "<=" || r == "=<") {
                row.rel = Relation::less_equal;
            } else if (r == ">=" || r == "=>") {
                row.rel = Relation::less_equal;
                flip = -1.0;
            } else if (r == "=") {
                row.rel = Relation::equal;
            } else {
                fail(rel_tok.line, "unsupported relation '" + r + "'");
            }
            std::unordered_set<std::uint32_t> in_row;
            for (const auto& t : terms) {
                const auto i = vars.var(t.name);
                if (!in_row.insert(i).second) fail(t.line, "duplicate variable '" + t.name + "' in one row");
                row.vars.push_back(i);
                row.coeffs.push_back(flip * t.coeff);
            }
            row.rhs = flip * rhs;
            rows.push_back(std::move(row));
            row_lines.push_back(line);
        }
    }

    std::unordered_set<std::string> binary;
    for (const auto& [name, line] : binary_names) {
        binary.insert(name);
        vars.var(name);
    }
    for (std::size_t i = 0; i < vars.size(); ++i)
        if (!binary.count(vars.names()[i])) throw ParseError("lp: variable '" + vars.names()[i] + "' is not declared binary");

    IlpInstance inst;
    inst.num_vars = vars.size();
    inst.objective.assign(inst.num_vars, 0.0);
    for (auto [i, c] : obj_terms) inst.objective[i] += c;
    if (maximize)
        for (auto& c : inst.objective) c = -c;
    inst.constraints = std::move(rows);
    inst.names = std::move(vars.names());
    if (default_names(inst.names)) inst.names.clear();
    try {
        inst.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("lp: ") + e.what());
    }
    return inst;
}

IlpInstance parse_lp(std::istream& in)
{
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_lp(std::string_view(text));
}

void write_lp(std::ostream& out, const IlpInstance& instance)
{
    auto term = [&](double c, std::size_t i, bool first) {
        std::string s;
        if (c < 0 || std::signbit(c))
            s = first ? "- " : " - ";
        else
            s = first ? "" : " + ";
        return s + fmt_number(std::abs(c)) + " " + instance.var_name(i);
    };
    out << "Minimize\n obj:";
    for (std::size_t i = 0; i < instance.num_vars; ++i) out << (i == 0 ? " " : "") << term(instance.objective[i], i, i == 0);
    out << "\nSubject To\n";
    for (std::size_t j = 0; j < instance.constraints.size(); ++j) {
        const auto& row = instance.constraints[j];
        out << " c" << (j + 1) << ":";
        for (std::size_t k = 0; k < row.vars.size(); ++k) out << (k == 0 ? " " : "") << term(row.coeffs[k], row.vars[k], k == 0);
        out << (row.rel == Relation::equal ? " = " : " <= ") << fmt_number(row.rhs) << "\n";
    }
    out << "Binary\n";
    for (std::size_t i = 0; i < instance.num_vars; ++i) out << " " << instance.var_name(i);
    out << "\nEnd\n";
}

}  // namespace doge
