#pragma once

// Order-flow events, the newline-delimited JSON wire format, and a
// deterministic price-time (FIFO) limit-order-book emulator.
//
// Prices are quantized to integer ticks and sizes to integer 1e-8 base-unit
// lots inside the book, so matching arithmetic and book invariants are exact.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "tickcast/common.hpp"

namespace tickcast::orderflow {

enum class EventType : int { LimitPlace = 1, Open = 2, Cancel = 3 };
enum class Side : int { Buy = 1, Sell = 2 };
enum class Pair : int { PairA = 1, PairB = 2 };

inline Side opposite(Side s) { return s == Side::Buy ? Side::Sell : Side::Buy; }

struct OrderFlowEvent {
    Timestamp timestamp = 0;  // microseconds since epoch
    EventType type = EventType::LimitPlace;
    Side side = Side::Buy;
    double price = 0.0;  // quote currency, >= 0
    double size = 0.0;   // base currency, > 0
    std::string order_id;
    Pair pair = Pair::PairA;
};

// --- wire format -----------------------------------------------------------

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* name) {
    auto it = obj.find(name);
    if (it == obj.end()) throw SchemaError(name, "missing");
    return *it;
}

inline double decimal_field(const nlohmann::json& obj, const char* name) {
    const auto& v = require_field(obj, name);
    if (v.is_string()) {
        const std::string& s = v.get_ref<const std::string&>();
        char* end = nullptr;
        double x = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0') throw SchemaError(name, "not a decimal: " + s);
        return x;
    }
    if (v.is_number()) return v.get<double>();
    throw SchemaError(name, "expected decimal string or number");
}

inline std::string decimal_to_string(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.8f", value);
    return buf;
}

}  // namespace detail

inline const char* to_string(EventType t) {
    switch (t) {
        case EventType::LimitPlace: return "limit";
        case EventType::Open: return "open";
        case EventType::Cancel: return "cancel";
    }
    return "?";
}

inline const char* to_string(Side s) { return s == Side::Buy ? "buy" : "sell"; }
inline const char* to_string(Pair p) { return p == Pair::PairA ? "A" : "B"; }

// Decode one exchange message. Unknown auxiliary fields are ignored.
inline OrderFlowEvent parse_message(std::string_view text) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed JSON message: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError("message is not a JSON object");

    OrderFlowEvent ev;

    const auto& type = detail::require_field(obj, "type");
    if (!type.is_string()) throw SchemaError("type", "expected string");
    const std::string& ts = type.get_ref<const std::string&>();
    if (ts == "limit") ev.type = EventType::LimitPlace;
    else if (ts == "open") ev.type = EventType::Open;
    else if (ts == "cancel") ev.type = EventType::Cancel;
    else throw SchemaError("type", "unknown value: " + ts);

    const auto& side = detail::require_field(obj, "side");
    if (!side.is_string()) throw SchemaError("side", "expected string");
    const std::string& ss = side.get_ref<const std::string&>();
    if (ss == "buy") ev.side = Side::Buy;
    else if (ss == "sell") ev.side = Side::Sell;
    else throw SchemaError("side", "unknown value: " + ss);

    ev.price = detail::decimal_field(obj, "price");
    if (ev.price < 0.0) throw SchemaError("price", "negative");
    ev.size = detail::decimal_field(obj, "size");
    if (!(ev.size > 0.0)) throw SchemaError("size", "must be positive");

    const auto& time = detail::require_field(obj, "time");
    if (!time.is_number_integer() && !time.is_number_unsigned())
        throw SchemaError("time", "expected integer microseconds");
    ev.timestamp = time.get<std::int64_t>();

    const auto& oid = detail::require_field(obj, "order_id");
    if (!oid.is_string()) throw SchemaError("order_id", "expected string");
    ev.order_id = oid.get<std::string>();

    const auto& pid = detail::require_field(obj, "product_id");
    if (!pid.is_string()) throw SchemaError("product_id", "expected string");
    const std::string& ps = pid.get_ref<const std::string&>();
    if (ps == "A") ev.pair = Pair::PairA;
    else if (ps == "B") ev.pair = Pair::PairB;
    else throw SchemaError("product_id", "unknown value: " + ps);

    return ev;
}

// Canonical single-line form: fixed field order, 8-decimal price/size.
// parse(serialize(e)) round-trips and serialize(parse(line)) is idempotent
// on canonical input.
inline std::string serialize_message(const OrderFlowEvent& ev) {
    std::string out;
    out.reserve(160);
    out += "{\"type\":\"";
    out += to_string(ev.type);
    out += "\",\"side\":\"";
    out += to_string(ev.side);
    out += "\",\"price\":\"";
    out += detail::decimal_to_string(ev.price);
    out += "\",\"size\":\"";
    out += detail::decimal_to_string(ev.size);
    out += "\",\"time\":";
    out += std::to_string(ev.timestamp);
    out += ",\"order_id\":\"";
    out += ev.order_id;
    out += "\",\"product_id\":\"";
    out += to_string(ev.pair);
    out += "\"}";
    return out;
}

// --- stream files -----------------------------------------------------------
// Newline-delimited JSON, one message per line, UTF-8. A path ending in .gz
// is gzip-compressed (zlib). "-" means stdin/stdout. Lines starting with '#'
// are metadata comments and are skipped by the reader.

namespace detail {
inline bool has_gz_suffix(std::string_view path) {
    return path.size() > 3 && path.substr(path.size() - 3) == ".gz";
}
}  // namespace detail

class StreamWriter {
public:
    explicit StreamWriter(const std::string& path) : path_(path) {
        if (path == "-") {
            out_ = &std::cout;
        } else if (detail::has_gz_suffix(path)) {
            gz_ = gzopen(path.c_str(), "wb");
            if (gz_ == nullptr) throw IoError("cannot open for writing: " + path);
        } else {
            file_.open(path, std::ios::binary);
            if (!file_) throw IoError("cannot open for writing: " + path);
            out_ = &file_;
        }
    }

    ~StreamWriter() { close(); }

    StreamWriter(const StreamWriter&) = delete;
    StreamWriter& operator=(const StreamWriter&) = delete;

    void write_line(std::string_view line) {
        if (gz_ != nullptr) {
            if (gzwrite(gz_, line.data(), static_cast<unsigned>(line.size())) !=
                    static_cast<int>(line.size()) ||
                gzwrite(gz_, "\n", 1) != 1)
                throw IoError("gzip write failed: " + path_);
        } else {
            out_->write(line.data(), static_cast<std::streamsize>(line.size()));
            out_->put('\n');
            if (!*out_) throw IoError("write failed: " + path_);
        }
    }

    void close() {
        if (gz_ != nullptr) {
            gzclose(gz_);
            gz_ = nullptr;
        }
        if (file_.is_open()) file_.close();
    }

private:
    std::string path_;
    std::ofstream file_;
    std::ostream* out_ = nullptr;
    gzFile gz_ = nullptr;
};

class StreamReader {
public:
    explicit StreamReader(const std::string& path) : path_(path) {
        if (path == "-") {
            in_ = &std::cin;
        } else if (detail::has_gz_suffix(path)) {
            gz_ = gzopen(path.c_str(), "rb");
            if (gz_ == nullptr) throw IoError("cannot open for reading: " + path);
        } else {
            file_.open(path, std::ios::binary);
            if (!file_) throw IoError("cannot open for reading: " + path);
            in_ = &file_;
        }
    }

    ~StreamReader() {
        if (gz_ != nullptr) gzclose(gz_);
    }

    StreamReader(const StreamReader&) = delete;
    StreamReader& operator=(const StreamReader&) = delete;

    // Next non-comment, non-empty line. Returns false at end of stream.
    bool next_line(std::string& line) {
        while (next_raw_line(line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            return true;
        }
        return false;
    }

private:
    bool next_raw_line(std::string& line) {
        if (gz_ != nullptr) {
            line.clear();
            char buf[4096];
            while (true) {
                if (gzgets(gz_, buf, sizeof(buf)) == nullptr) return !line.empty();
                line += buf;
                if (!line.empty() && line.back() == '\n') {
                    line.pop_back();
                    return true;
                }
            }
        }
        return static_cast<bool>(std::getline(*in_, line));
    }

    std::string path_;
    std::ifstream file_;
    std::istream* in_ = nullptr;
    gzFile gz_ = nullptr;
};

// Read a whole stream, enforcing the non-decreasing timestamp invariant.
inline std::vector<OrderFlowEvent> read_stream(const std::string& path) {
    StreamReader reader(path);
    std::vector<OrderFlowEvent> events;
    std::string line;
    Timestamp prev = std::numeric_limits<Timestamp>::min();
    while (reader.next_line(line)) {
        OrderFlowEvent ev = parse_message(line);
        if (ev.timestamp < prev)
            throw OrderingError("timestamp regression in stream at t=" +
                                std::to_string(ev.timestamp));
        prev = ev.timestamp;
        events.push_back(std::move(ev));
    }
    return events;
}

inline void write_stream(const std::string& path, const std::vector<OrderFlowEvent>& events,
                         const std::string& meta_comment = "") {
    StreamWriter writer(path);
    if (!meta_comment.empty()) writer.write_line("# " + meta_comment);
    for (const auto& ev : events) writer.write_line(serialize_message(ev));
}

// --- book emulator ----------------------------------------------------------

// Base-currency sizes are held as integer lots of 1e-8.
using SizeUnits = std::int64_t;
inline constexpr double kSizeUnitsPerBase = 1e8;

inline SizeUnits to_size_units(double size) {
    return static_cast<SizeUnits>(std::llround(size * kSizeUnitsPerBase));
}
inline double from_size_units(SizeUnits u) {
    return static_cast<double>(u) / kSizeUnitsPerBase;
}

struct BookEntry {
    std::string order_id;
    SizeUnits size = 0;
};

struct BookLevel {
    SizeUnits total = 0;
    std::deque<BookEntry> queue;  // FIFO: front is oldest
};

inline bool operator==(const BookEntry& a, const BookEntry& b) {
    return a.order_id == b.order_id && a.size == b.size;
}
inline bool operator==(const BookLevel& a, const BookLevel& b) {
    return a.total == b.total && a.queue == b.queue;
}

struct ApplyResult {
    SizeUnits traded = 0;                   // units filled by an Open / crossing limit
    std::vector<std::string> removed_ids;   // fully-filled or cancelled resting orders
    bool unknown_cancel = false;
    std::int64_t first_fill_ticks = 0;      // price level of the first fill
    std::int64_t last_fill_ticks = 0;       // price level of the last fill
};

// Aggregated book state. Bids sorted best-first (descending), asks ascending.
class BookState {
public:
    explicit BookState(double tick_size) : tick_size_(tick_size) {
        if (!(tick_size > 0.0)) throw ConfigError("tick_size must be positive");
    }

    double tick_size() const { return tick_size_; }
    Timestamp last_event_time() const { return last_event_time_; }
    std::uint64_t unknown_cancel_count() const { return unknown_cancel_count_; }

    std::int64_t price_to_ticks(double price) const {
        return static_cast<std::int64_t>(std::llround(price / tick_size_));
    }
    double ticks_to_price(std::int64_t ticks) const {
        return static_cast<double>(ticks) * tick_size_;
    }

    std::optional<std::int64_t> best_bid_ticks() const {
        if (bids_.empty()) return std::nullopt;
        return bids_.begin()->first;
    }
    std::optional<std::int64_t> best_ask_ticks() const {
        if (asks_.empty()) return std::nullopt;
        return asks_.begin()->first;
    }

    bool has_mid() const { return !bids_.empty() && !asks_.empty(); }

    const std::map<std::int64_t, BookLevel, std::greater<std::int64_t>>& bids() const {
        return bids_;
    }
    const std::map<std::int64_t, BookLevel>& asks() const { return asks_; }

    std::size_t order_count(Side side) const {
        return side == Side::Buy ? bid_order_count_ : ask_order_count_;
    }

    struct OrderInfo {
        Side side;
        std::int64_t ticks;
        SizeUnits size;
    };

    // Locate a resting order by id (remaining size included).
    std::optional<OrderInfo> find_order(const std::string& order_id) const {
        auto it = orders_.find(order_id);
        if (it == orders_.end()) return std::nullopt;
        const auto& ref = it->second;
        const BookLevel* lvl = nullptr;
        if (ref.side == Side::Buy) {
            auto lit = bids_.find(ref.ticks);
            if (lit != bids_.end()) lvl = &lit->second;
        } else {
            auto lit = asks_.find(ref.ticks);
            if (lit != asks_.end()) lvl = &lit->second;
        }
        if (lvl == nullptr) return std::nullopt;
        for (const auto& e : lvl->queue)
            if (e.order_id == order_id) return OrderInfo{ref.side, ref.ticks, e.size};
        return std::nullopt;
    }

    // Resting volume (units) within the top `depth` levels of one side.
    SizeUnits side_volume_units(Side side, int depth) const {
        SizeUnits v = 0;
        int n = 0;
        if (side == Side::Buy) {
            for (const auto& [t, lvl] : bids_) {
                if (n++ >= depth) break;
                v += lvl.total;
            }
        } else {
            for (const auto& [t, lvl] : asks_) {
                if (n++ >= depth) break;
                v += lvl.total;
            }
        }
        return v;
    }

    ApplyResult apply(const OrderFlowEvent& ev) {
        if (ev.timestamp < last_event_time_)
            throw OrderingError("event timestamp " + std::to_string(ev.timestamp) +
                                " precedes book time " + std::to_string(last_event_time_));
        last_event_time_ = ev.timestamp;

        ApplyResult res;
        switch (ev.type) {
            case EventType::LimitPlace: apply_limit(ev, res); break;
            case EventType::Cancel: apply_cancel(ev, res); break;
            case EventType::Open: apply_open(ev.side, to_size_units(ev.size), res); break;
        }
        return res;
    }

    // Exact structural equality (levels, queue order, sizes).
    bool same_orders(const BookState& other) const {
        return bids_ == other.bids_ && asks_ == other.asks_;
    }

    // Invariant check used by tests and the acceptance replay. Returns an
    // explanation of the first violation, or empty when sound.
    std::string check_invariants() const {
        if (!bids_.empty() && !asks_.empty() && bids_.begin()->first >= asks_.begin()->first)
            return "crossed book: best bid >= best ask";
        auto check_side = [](const auto& levels, const char* name) -> std::string {
            for (const auto& [ticks, lvl] : levels) {
                if (lvl.queue.empty()) return std::string(name) + ": empty level kept";
                SizeUnits sum = 0;
                for (const auto& e : lvl.queue) {
                    if (e.size <= 0) return std::string(name) + ": non-positive queue size";
                    sum += e.size;
                }
                if (sum != lvl.total) return std::string(name) + ": aggregate != queue sum";
            }
            return "";
        };
        if (auto s = check_side(bids_, "bids"); !s.empty()) return s;
        if (auto s = check_side(asks_, "asks"); !s.empty()) return s;
        return "";
    }

private:
    struct OrderRef {
        Side side;
        std::int64_t ticks;
    };

    void apply_limit(const OrderFlowEvent& ev, ApplyResult& res) {
        const std::int64_t ticks = price_to_ticks(ev.price);
        SizeUnits remaining = to_size_units(ev.size);
        if (remaining <= 0) return;

        // A limit placed at or through the opposite best is marketable: it
        // consumes liquidity up to its limit price, then the remainder rests.
        if (ev.side == Side::Buy) {
            while (remaining > 0 && !asks_.empty() && asks_.begin()->first <= ticks)
                remaining = consume_best(Side::Sell, remaining, res);
        } else {
            while (remaining > 0 && !bids_.empty() && bids_.begin()->first >= ticks)
                remaining = consume_best(Side::Buy, remaining, res);
        }
        if (remaining <= 0) return;

        BookLevel& lvl = ev.side == Side::Buy ? bids_[ticks] : asks_[ticks];
        lvl.queue.push_back(BookEntry{ev.order_id, remaining});
        lvl.total += remaining;
        orders_[ev.order_id] = OrderRef{ev.side, ticks};
        bump_count(ev.side, +1);
    }

    void apply_cancel(const OrderFlowEvent& ev, ApplyResult& res) {
        auto it = orders_.find(ev.order_id);
        if (it == orders_.end()) {
            // Real feeds carry cancels for orders placed before the session.
            ++unknown_cancel_count_;
            res.unknown_cancel = true;
            return;
        }
        const OrderRef ref = it->second;
        auto remove_from = [&](auto& levels) {
            auto lit = levels.find(ref.ticks);
            BookLevel& lvl = lit->second;
            for (auto qit = lvl.queue.begin(); qit != lvl.queue.end(); ++qit) {
                if (qit->order_id == ev.order_id) {
                    lvl.total -= qit->size;
                    lvl.queue.erase(qit);
                    break;
                }
            }
            if (lvl.queue.empty()) levels.erase(lit);
        };
        if (ref.side == Side::Buy) remove_from(bids_);
        else remove_from(asks_);
        orders_.erase(it);
        bump_count(ref.side, -1);
        res.removed_ids.push_back(ev.order_id);
    }

    void apply_open(Side taker, SizeUnits units, ApplyResult& res) {
        const Side maker = opposite(taker);
        while (units > 0) {
            bool empty = maker == Side::Buy ? bids_.empty() : asks_.empty();
            if (empty) break;  // no liquidity left; remainder evaporates
            units = consume_best(maker, units, res);
        }
    }

    // Consume from the best level of `maker` side; returns unfilled units.
    SizeUnits consume_best(Side maker, SizeUnits units, ApplyResult& res) {
        auto fill_level = [&](auto& levels) {
            auto lit = levels.begin();
            BookLevel& lvl = lit->second;
            if (res.traded == 0) res.first_fill_ticks = lit->first;
            res.last_fill_ticks = lit->first;
            while (units > 0 && !lvl.queue.empty()) {
                BookEntry& front = lvl.queue.front();
                const SizeUnits fill = std::min(front.size, units);
                front.size -= fill;
                lvl.total -= fill;
                units -= fill;
                res.traded += fill;
                if (front.size == 0) {
                    res.removed_ids.push_back(front.order_id);
                    orders_.erase(front.order_id);
                    bump_count(maker, -1);
                    lvl.queue.pop_front();
                }
            }
            if (lvl.queue.empty()) levels.erase(lit);
        };
        if (maker == Side::Buy) fill_level(bids_);
        else fill_level(asks_);
        return units;
    }

    void bump_count(Side side, int delta) {
        auto& c = side == Side::Buy ? bid_order_count_ : ask_order_count_;
        c += delta;
    }

    double tick_size_;
    std::map<std::int64_t, BookLevel, std::greater<std::int64_t>> bids_;
    std::map<std::int64_t, BookLevel> asks_;
    std::unordered_map<std::string, OrderRef> orders_;
    Timestamp last_event_time_ = std::numeric_limits<Timestamp>::min();
    std::size_t bid_order_count_ = 0;
    std::size_t ask_order_count_ = 0;
    std::uint64_t unknown_cancel_count_ = 0;
};

// Mid price in quote currency; requires both sides present.
inline double mid_price(const BookState& book) {
    if (!book.has_mid()) throw DomainError("no mid price: book is one-sided or empty");
    return (book.ticks_to_price(*book.best_bid_ticks()) +
            book.ticks_to_price(*book.best_ask_ticks())) /
           2.0;
}

// Signed tick count, rounding ties away from zero.
inline long tick_quantize(double price_change, double tick_size) {
    if (!(tick_size > 0.0)) throw DomainError("tick_size must be positive");
    return static_cast<long>(std::llround(price_change / tick_size));
}

}  // namespace tickcast::orderflow
