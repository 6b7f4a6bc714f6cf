// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "pstf/scene.h"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace pstf {

// ---------------------------------------------------------------------------
// Primitive geometry

double Primitive::area() const {
    switch (kind) {
    case Kind::Sphere: return kFourPi * sqr(radius);
    case Kind::Quad: return length(cross(e1, e2));
    case Kind::Triangle: return 0.5 * length(cross(e1, e2));
    }
    return 0.0;
}

Aabb Primitive::bounds() const {
    Aabb box;
    if (kind == Kind::Sphere) {
        box.extend(center - Vec3(radius, radius, radius));
        box.extend(center + Vec3(radius, radius, radius));
    } else {
        box.extend(p0);
        box.extend(p0 + e1);
        box.extend(p0 + e2);
        if (kind == Kind::Quad)
            box.extend(p0 + e1 + e2);
    }
    return box;
}

Vec3 Primitive::frontNormal(const Vec3 &p) const {
    if (kind == Kind::Sphere)
        return normalize(p - center);
    return normalize(cross(e1, e2));
}

// ---------------------------------------------------------------------------
// Intersection

namespace {

bool intersectSphere(const Primitive &prim, const Vec3 &o, const Vec3 &d, double tMin,
                     double tMax, double &tOut) {
    Vec3 oc = o - prim.center;
    double b = dot(oc, d);
    double c = lengthSq(oc) - sqr(prim.radius);
    double disc = b * b - c;
    if (disc < 0.0)
        return false;
    double s = std::sqrt(disc);
    double t = -b - s;
    if (t <= tMin)
        t = -b + s;
    if (t <= tMin || t >= tMax)
        return false;
    tOut = t;
    return true;
}

bool intersectParallelogram(const Primitive &prim, const Vec3 &o, const Vec3 &d, double tMin,
                            double tMax, bool triangle, double &tOut) {
    Vec3 n = cross(prim.e1, prim.e2);
    double denom = dot(n, d);
    if (denom == 0.0)
        return false;
    double t = dot(n, prim.p0 - o) / denom;
    if (t <= tMin || t >= tMax)
        return false;
    Vec3 rel = o + d * t - prim.p0;
    // Solve rel = u*e1 + v*e2 in the plane.
    double a11 = lengthSq(prim.e1), a12 = dot(prim.e1, prim.e2), a22 = lengthSq(prim.e2);
    double b1 = dot(rel, prim.e1), b2 = dot(rel, prim.e2);
    double det = a11 * a22 - a12 * a12;
    if (det == 0.0)
        return false;
    double u = (b1 * a22 - b2 * a12) / det;
    double v = (b2 * a11 - b1 * a12) / det;
    if (triangle) {
        if (u < 0.0 || v < 0.0 || u + v > 1.0)
            return false;
    } else {
        if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0)
            return false;
    }
    tOut = t;
    return true;
}

} // namespace

std::optional<Hit> Scene::intersect(const Vec3 &origin, const Vec3 &dir, double tMin,
                                    double tMax) const {
    double best = tMax;
    int bestPrim = -1;
    for (size_t i = 0; i < primitives.size(); ++i) {
        const Primitive &prim = primitives[i];
        double t;
        bool hit = false;
        switch (prim.kind) {
        case Primitive::Kind::Sphere:
            hit = intersectSphere(prim, origin, dir, tMin, best, t);
            break;
        case Primitive::Kind::Quad:
            hit = intersectParallelogram(prim, origin, dir, tMin, best, false, t);
            break;
        case Primitive::Kind::Triangle:
            hit = intersectParallelogram(prim, origin, dir, tMin, best, true, t);
            break;
        }
        if (hit && t < best) {
            best = t;
            bestPrim = int(i);
        }
    }
    if (bestPrim < 0)
        return std::nullopt;

    const Primitive &prim = primitives[bestPrim];
    Hit h;
    h.distance = best;
    h.position = origin + dir * best;
    h.primitive = bestPrim;
    h.material = prim.material;
    h.normal = prim.frontNormal(h.position);
    h.backface = dot(h.normal, dir) > 0.0;
    if (h.backface)
        h.normal = -h.normal;
    return h;
}

bool Scene::occluded(const Vec3 &a, const Vec3 &b) const {
    Vec3 d = b - a;
    double dist = length(d);
    if (dist == 0.0)
        return false;
    d = d / dist;
    const double eps = 1e-6 * std::max(1.0, m_diameter);
    return intersect(a, d, eps, dist - eps).has_value();
}

RGB Scene::emissionToward(const Hit &hit, const Vec3 &) const {
    const Material &mat = materials[hit.material];
    if (!mat.isEmissive())
        return RGB(0.0);
    if (hit.backface && !mat.twoSided)
        return RGB(0.0);
    return mat.emission;
}

// ---------------------------------------------------------------------------
// Emitters

namespace {

double emitterPower(const Material &mat, const Primitive &prim) {
    double sides = mat.twoSided ? 2.0 : 1.0;
    return luminance(mat.emission) * prim.area() * kPi * sides;
}

} // namespace

void Scene::finalize() {
    if (materials.empty() && !primitives.empty())
        throw SceneError("scene has primitives but no materials");
    for (size_t i = 0; i < materials.size(); ++i) {
        const Material &m = materials[i];
        auto inUnit = [](const RGB &c) {
            return c.r >= 0 && c.g >= 0 && c.b >= 0 && c.r <= 1 && c.g <= 1 && c.b <= 1;
        };
        if (!inUnit(m.diffuseAlbedo) || !inUnit(m.glossyAlbedo))
            throw SceneError("material '" + m.name + "': albedo outside [0,1]");
        RGB total = m.diffuseAlbedo + m.glossyAlbedo;
        if (total.r > 1.0 + 1e-9 || total.g > 1.0 + 1e-9 || total.b > 1.0 + 1e-9)
            throw SceneError("material '" + m.name + "': diffuse + glossy albedo exceeds 1");
        if (m.glossyExponent < 0.0)
            throw SceneError("material '" + m.name + "': negative glossy exponent");
        if (!isFinite(m.emission) || m.emission.r < 0 || m.emission.g < 0 || m.emission.b < 0)
            throw SceneError("material '" + m.name + "': emission must be finite and >= 0");
    }
    m_bounds = Aabb();
    for (size_t i = 0; i < primitives.size(); ++i) {
        const Primitive &p = primitives[i];
        if (p.material < 0 || p.material >= int(materials.size()))
            throw SceneError("primitive " + std::to_string(i) + ": unknown material index " +
                             std::to_string(p.material) + " of " +
                             std::to_string(materials.size()));
        if (p.kind == Primitive::Kind::Sphere && p.radius <= 0.0)
            throw SceneError("primitive " + std::to_string(i) + ": sphere radius must be > 0");
        if (p.kind != Primitive::Kind::Sphere && p.area() <= 0.0)
            throw SceneError("primitive " + std::to_string(i) + ": degenerate (zero area)");
        m_bounds.extend(p.bounds());
    }
    if (primitives.empty())
        m_bounds.extend(camera.origin);
    m_diameter = std::max(m_bounds.diameter(), 1e-6);

    if (camera.verticalFov <= 0.0 || camera.verticalFov >= 180.0)
        throw SceneError("camera: vertical_fov must be in (0, 180)");
    if (camera.width < 1 || camera.height < 1)
        throw SceneError("camera: resolution must be at least 1x1");

    m_emitters.clear();
    m_emitterCdf.clear();
    double total = 0.0;
    for (size_t i = 0; i < primitives.size(); ++i) {
        const Material &m = materials[primitives[i].material];
        if (m.isEmissive()) {
            m_emitters.push_back(int(i));
            total += emitterPower(m, primitives[i]);
            m_emitterCdf.push_back(total);
        }
    }
    double envPower = 0.0;
    if (environmentEmissive()) {
        // radiant power entering through the bounding sphere
        double radius = 0.5 * m_diameter;
        envPower = luminance(environment) * kFourPi * kPi * sqr(radius);
        total += envPower;
    }
    m_environmentSelectProb = total > 0.0 ? envPower / total : 0.0;
    for (double &c : m_emitterCdf)
        c /= total > 0.0 ? total : 1.0;

    if (!hasEmitters() && !allowNoEmitters)
        throw SceneError("scene has no emitters (add a light, an environment, or "
                         "'options { allow_no_emitters true }')");
}

double Scene::emitterSelectProb(int primitive) const {
    for (size_t i = 0; i < m_emitters.size(); ++i) {
        if (m_emitters[i] == primitive)
            return m_emitterCdf[i] - (i > 0 ? m_emitterCdf[i - 1] : 0.0);
    }
    return 0.0;
}

std::optional<LightSample> Scene::sampleLight(const Vec3 &, double uSelect, const Vec2 &u) const {
    if (!hasEmitters())
        return std::nullopt;

    if (environmentEmissive() && uSelect >= 1.0 - m_environmentSelectProb) {
        LightSample ls;
        ls.isEnvironment = true;
        ls.direction = sampleUniformSphere(u);
        ls.pdfSolidAngle = m_environmentSelectProb * uniformSpherePdf();
        ls.emission = environment;
        return ls;
    }

    // binary search over the area-light cdf
    size_t lo = 0, hi = m_emitterCdf.size();
    while (lo + 1 < hi) {
        size_t mid = (lo + hi) / 2;
        if (m_emitterCdf[mid - 1] <= uSelect)
            lo = mid;
        else
            hi = mid;
    }
    int primIdx = m_emitters[lo];
    const Primitive &prim = primitives[primIdx];
    const Material &mat = materials[prim.material];
    double selectProb = m_emitterCdf[lo] - (lo > 0 ? m_emitterCdf[lo - 1] : 0.0);

    LightSample ls;
    ls.primitive = primIdx;
    ls.emission = mat.emission;
    switch (prim.kind) {
    case Primitive::Kind::Sphere: {
        Vec3 dir = sampleUniformSphere(u);
        ls.point = prim.center + dir * prim.radius;
        ls.normal = dir;
        break;
    }
    case Primitive::Kind::Quad:
        ls.point = prim.p0 + prim.e1 * u.x + prim.e2 * u.y;
        ls.normal = prim.frontNormal(ls.point);
        break;
    case Primitive::Kind::Triangle: {
        double su = std::sqrt(u.x);
        double a = 1.0 - su, b = u.y * su;
        ls.point = prim.p0 + prim.e1 * a + prim.e2 * b;
        ls.normal = prim.frontNormal(ls.point);
        break;
    }
    }
    ls.pdfArea = selectProb / prim.area();
    return ls;
}

double Scene::lightPdfSolidAngle(const Vec3 &from, const Vec3 &dir, const Hit &hit) const {
    if (hit.primitive < 0)
        return 0.0;
    const Material &mat = materials[hit.material];
    if (!mat.isEmissive())
        return 0.0;
    if (hit.backface && !mat.twoSided)
        return 0.0;
    double selectProb = emitterSelectProb(hit.primitive);
    if (selectProb == 0.0)
        return 0.0;
    const Primitive &prim = primitives[hit.primitive];
    double cosLight = std::abs(dot(prim.frontNormal(hit.position), dir));
    if (cosLight <= 1e-12)
        return 0.0;
    return selectProb / prim.area() * sqr(hit.distance) / cosLight;
}

double Scene::environmentPdfSolidAngle() const {
    return m_environmentSelectProb * uniformSpherePdf();
}

// ---------------------------------------------------------------------------
// BSDF

namespace {

struct LobeProbs {
    double diffuse = 0.0, glossy = 0.0;
};

LobeProbs lobeProbs(const Material &mat) {
    double ld = luminance(mat.diffuseAlbedo);
    double lg = luminance(mat.glossyAlbedo);
    double sum = ld + lg;
    if (sum <= 0.0)
        return {};
    return {ld / sum, lg / sum};
}

} // namespace

RGB evalBsdf(const Material &mat, const Vec3 &wi, const Vec3 &wo, const Vec3 &n) {
    double cosI = dot(wi, n);
    double cosO = dot(wo, n);
    if (cosI <= 0.0 || cosO <= 0.0)
        return RGB(0.0);
    RGB f = mat.diffuseAlbedo * kInvPi;
    if (!mat.glossyAlbedo.isBlack()) {
        double cosAlpha = dot(wi, reflect(wo, n));
        if (cosAlpha > 0.0) {
            double e = mat.glossyExponent;
            f += mat.glossyAlbedo * ((e + 2.0) * kInvPi * 0.5 * std::pow(cosAlpha, e));
        }
    }
    return f;
}

double pdfBsdf(const Material &mat, const Vec3 &wi, const Vec3 &wo, const Vec3 &n) {
    if (dot(wo, n) <= 0.0)
        return 0.0;
    LobeProbs q = lobeProbs(mat);
    double pdf = 0.0;
    if (q.diffuse > 0.0)
        pdf += q.diffuse * cosineHemispherePdf(dot(wi, n));
    if (q.glossy > 0.0)
        pdf += q.glossy * powerCosinePdf(mat.glossyExponent, dot(wi, reflect(wo, n)));
    return pdf;
}

BsdfSample sampleBsdf(const Material &mat, const Vec3 &wo, const Vec3 &n, double uLobe,
                      const Vec2 &u) {
    BsdfSample s;
    LobeProbs q = lobeProbs(mat);
    if (q.diffuse + q.glossy <= 0.0 || dot(wo, n) <= 0.0)
        return s; // absorb

    if (uLobe < q.diffuse) {
        s.wi = buildFrame(n).toWorld(sampleCosineHemisphere(u));
    } else {
        Vec3 mirror = reflect(wo, n);
        s.wi = buildFrame(mirror).toWorld(samplePowerCosine(mat.glossyExponent, u));
    }
    s.pdf = pdfBsdf(mat, s.wi, wo, n);
    if (s.pdf <= 0.0)
        return s; // numerically degenerate; treat as absorb
    s.f = evalBsdf(mat, s.wi, wo, n); // zero below the hemisphere
    s.valid = true;
    return s;
}

// ---------------------------------------------------------------------------
// Camera

CameraRay generateCameraRay(const Camera &camera, int px, int py, const Vec2 &jitter) {
    Vec3 forward = normalize(camera.lookAt - camera.origin);
    Vec3 right = normalize(cross(forward, camera.up));
    Vec3 up = cross(right, forward);
    double tanHalf = std::tan(0.5 * camera.verticalFov * kPi / 180.0);
    double aspect = double(camera.width) / double(camera.height);

    double ndcX = ((px + jitter.x) / camera.width) * 2.0 - 1.0;
    double ndcY = 1.0 - ((py + jitter.y) / camera.height) * 2.0;
    Vec3 dir = normalize(forward + right * (ndcX * tanHalf * aspect) + up * (ndcY * tanHalf));
    return {camera.origin, dir};
}

double pixelAngle(const Camera &camera) {
    double tanHalf = std::tan(0.5 * camera.verticalFov * kPi / 180.0);
    return 2.0 * tanHalf / camera.height;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

struct Token {
    std::string text;
    int line;
};

std::vector<Token> tokenizeScene(const std::string &text) {
    std::vector<Token> tokens;
    std::istringstream in(text);
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        size_t hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) {
            // braces are tokens even when glued to a word
            while (!tok.empty()) {
                size_t brace = tok.find_first_of("{}");
                if (brace == std::string::npos) {
                    tokens.push_back({tok, lineNo});
                    break;
                }
                if (brace > 0)
                    tokens.push_back({tok.substr(0, brace), lineNo});
                tokens.push_back({std::string(1, tok[brace]), lineNo});
                tok.erase(0, brace + 1);
            }
        }
    }
    return tokens;
}

class TokenStream {
public:
    explicit TokenStream(std::vector<Token> tokens) : m_tokens(std::move(tokens)) {}

    bool done() const { return m_pos >= m_tokens.size(); }
    int line() const {
        return m_pos < m_tokens.size() ? m_tokens[m_pos].line
                                       : (m_tokens.empty() ? 0 : m_tokens.back().line);
    }
    const std::string &peek() const { return m_tokens[m_pos].text; }
    Token next() {
        if (done())
            throw SceneError("unexpected end of scene description", line());
        return m_tokens[m_pos++];
    }
    void expect(const std::string &text) {
        Token t = next();
        if (t.text != text)
            throw SceneError("expected '" + text + "', got '" + t.text + "'", t.line);
    }

private:
    std::vector<Token> m_tokens;
    size_t m_pos = 0;
};

double parseReal(const Token &tok, const std::string &field) {
    try {
        size_t pos = 0;
        double v = std::stod(tok.text, &pos);
        if (pos != tok.text.size())
            throw std::invalid_argument(tok.text);
        return v;
    } catch (const std::exception &) {
        throw SceneError("field '" + field + "': expected a number, got '" + tok.text + "'",
                         tok.line);
    }
}

Vec3 parseVec3(TokenStream &ts, const std::string &field) {
    double x = parseReal(ts.next(), field);
    double y = parseReal(ts.next(), field);
    double z = parseReal(ts.next(), field);
    return {x, y, z};
}

RGB parseRgb(TokenStream &ts, const std::string &field) {
    Vec3 v = parseVec3(ts, field);
    return {v.x, v.y, v.z};
}

bool parseBool(TokenStream &ts, const std::string &field) {
    Token t = ts.next();
    if (t.text != "true" && t.text != "false")
        throw SceneError("field '" + field + "': expected true or false", t.line);
    return t.text == "true";
}

} // namespace

Scene parseScene(const std::string &text) {
    Scene scene;
    TokenStream ts(tokenizeScene(text));
    std::map<std::string, int> materialIndex; // materials must be declared before use

    auto materialRef = [&](TokenStream &stream) -> int {
        Token ref = stream.next();
        auto it = materialIndex.find(ref.text);
        if (it != materialIndex.end())
            return it->second;
        // allow numeric 0-based indices; range-checked in finalize()
        bool numeric = !ref.text.empty() &&
                       std::all_of(ref.text.begin(), ref.text.end(),
                                   [](unsigned char c) { return std::isdigit(c); });
        if (numeric)
            return std::stoi(ref.text);
        throw SceneError("unknown material '" + ref.text + "'", ref.line);
    };

    while (!ts.done()) {
        Token header = ts.next();
        const std::string &kind = header.text;
        bool isPrimitive = kind == "sphere" || kind == "quad" || kind == "triangle";
        if (kind != "camera" && kind != "environment" && kind != "options" &&
            kind != "material" && !isPrimitive)
            throw SceneError("unknown block '" + kind + "'", header.line);

        std::string blockName;
        if (kind == "material") {
            Token name = ts.next();
            if (name.text == "{")
                throw SceneError("material block needs a name", name.line);
            blockName = name.text;
        }
        ts.expect("{");

        Material mat;
        Primitive prim;
        bool primHasMaterial = false;
        if (kind == "sphere")
            prim.kind = Primitive::Kind::Sphere;
        else if (kind == "quad")
            prim.kind = Primitive::Kind::Quad;
        else if (kind == "triangle")
            prim.kind = Primitive::Kind::Triangle;

        Vec3 triV0, triV1, triV2;
        bool haveV0 = false, haveV1 = false, haveV2 = false;

        bool closed = false;
        while (!ts.done()) {
            Token keyTok = ts.next();
            if (keyTok.text == "}") {
                closed = true;
                break;
            }
            const std::string &key = keyTok.text;
            int line = keyTok.line;
            if (kind == "camera") {
                if (key == "origin") scene.camera.origin = parseVec3(ts, key);
                else if (key == "look_at") scene.camera.lookAt = parseVec3(ts, key);
                else if (key == "up") scene.camera.up = parseVec3(ts, key);
                else if (key == "vertical_fov") scene.camera.verticalFov = parseReal(ts.next(), key);
                else if (key == "resolution") {
                    scene.camera.width = int(parseReal(ts.next(), key));
                    scene.camera.height = int(parseReal(ts.next(), key));
                } else throw SceneError("unknown camera field '" + key + "'", line);
            } else if (kind == "material") {
                if (key == "diffuse_albedo") mat.diffuseAlbedo = parseRgb(ts, key);
                else if (key == "glossy_albedo") mat.glossyAlbedo = parseRgb(ts, key);
                else if (key == "glossy_exponent") mat.glossyExponent = parseReal(ts.next(), key);
                else if (key == "emission") mat.emission = parseRgb(ts, key);
                else if (key == "two_sided") mat.twoSided = parseBool(ts, key);
                else throw SceneError("unknown material field '" + key + "'", line);
            } else if (kind == "environment") {
                if (key == "radiance") scene.environment = parseRgb(ts, key);
                else throw SceneError("unknown environment field '" + key + "'", line);
            } else if (kind == "options") {
                if (key == "allow_no_emitters") scene.allowNoEmitters = parseBool(ts, key);
                else throw SceneError("unknown option '" + key + "'", line);
            } else { // primitives
                if (key == "material") {
                    prim.material = materialRef(ts);
                    primHasMaterial = true;
                } else if (kind == "sphere" && key == "center") {
                    prim.center = parseVec3(ts, key);
                } else if (kind == "sphere" && key == "radius") {
                    prim.radius = parseReal(ts.next(), key);
                } else if (kind == "quad" && key == "corner") {
                    prim.p0 = parseVec3(ts, key);
                } else if (kind == "quad" && key == "edge_u") {
                    prim.e1 = parseVec3(ts, key);
                } else if (kind == "quad" && key == "edge_v") {
                    prim.e2 = parseVec3(ts, key);
                } else if (kind == "triangle" && key == "v0") {
                    triV0 = parseVec3(ts, key); haveV0 = true;
                } else if (kind == "triangle" && key == "v1") {
                    triV1 = parseVec3(ts, key); haveV1 = true;
                } else if (kind == "triangle" && key == "v2") {
                    triV2 = parseVec3(ts, key); haveV2 = true;
                } else {
                    throw SceneError("unknown " + kind + " field '" + key + "'", line);
                }
            }
        }
        if (!closed)
            throw SceneError("unterminated '" + kind + "' block", header.line);

        if (kind == "material") {
            mat.name = blockName;
            if (materialIndex.count(blockName))
                throw SceneError("duplicate material '" + blockName + "'", header.line);
            materialIndex[blockName] = int(scene.materials.size());
            scene.materials.push_back(mat);
        } else if (kind == "environment") {
            scene.hasEnvironment = true;
        } else if (isPrimitive) {
            if (!primHasMaterial)
                throw SceneError("primitive is missing a 'material' reference", header.line);
            if (kind == "triangle") {
                if (!haveV0 || !haveV1 || !haveV2)
                    throw SceneError("triangle needs v0, v1 and v2", header.line);
                prim.p0 = triV0;
                prim.e1 = triV1 - triV0;
                prim.e2 = triV2 - triV0;
            }
            scene.primitives.push_back(prim);
        }
    }

    scene.finalize();
    return scene;
}

Scene loadScene(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw SceneError("cannot open scene file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parseScene(ss.str());
}

// ---------------------------------------------------------------------------
// Serializer

namespace {

std::string fmtReal(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmtVec(const Vec3 &v) {
    return fmtReal(v.x) + " " + fmtReal(v.y) + " " + fmtReal(v.z);
}

std::string fmtRgb(const RGB &c) {
    return fmtReal(c.r) + " " + fmtReal(c.g) + " " + fmtReal(c.b);
}

} // namespace

std::string serializeScene(const Scene &scene) {
    std::ostringstream out;
    if (scene.allowNoEmitters)
        out << "options {\n  allow_no_emitters true\n}\n";
    out << "camera {\n"
        << "  origin " << fmtVec(scene.camera.origin) << "\n"
        << "  look_at " << fmtVec(scene.camera.lookAt) << "\n"
        << "  up " << fmtVec(scene.camera.up) << "\n"
        << "  vertical_fov " << fmtReal(scene.camera.verticalFov) << "\n"
        << "  resolution " << scene.camera.width << " " << scene.camera.height << "\n"
        << "}\n";
    for (const Material &m : scene.materials) {
        out << "material " << m.name << " {\n"
            << "  diffuse_albedo " << fmtRgb(m.diffuseAlbedo) << "\n"
            << "  glossy_albedo " << fmtRgb(m.glossyAlbedo) << "\n"
            << "  glossy_exponent " << fmtReal(m.glossyExponent) << "\n"
            << "  emission " << fmtRgb(m.emission) << "\n";
        if (m.twoSided)
            out << "  two_sided true\n";
        out << "}\n";
    }
    for (const Primitive &p : scene.primitives) {
        const std::string &matName = scene.materials[p.material].name;
        switch (p.kind) {
        case Primitive::Kind::Sphere:
            out << "sphere {\n  center " << fmtVec(p.center) << "\n  radius " << fmtReal(p.radius)
                << "\n  material " << matName << "\n}\n";
            break;
        case Primitive::Kind::Quad:
            out << "quad {\n  corner " << fmtVec(p.p0) << "\n  edge_u " << fmtVec(p.e1)
                << "\n  edge_v " << fmtVec(p.e2) << "\n  material " << matName << "\n}\n";
            break;
        case Primitive::Kind::Triangle:
            out << "triangle {\n  v0 " << fmtVec(p.p0) << "\n  v1 " << fmtVec(p.p0 + p.e1)
                << "\n  v2 " << fmtVec(p.p0 + p.e2) << "\n  material " << matName << "\n}\n";
            break;
        }
    }
    if (scene.hasEnvironment)
        out << "environment {\n  radiance " << fmtRgb(scene.environment) << "\n}\n";
    return out.str();
}

bool operator==(const Scene &a, const Scene &b) {
    auto matEq = [](const Material &x, const Material &y) {
        return x.name == y.name && x.diffuseAlbedo == y.diffuseAlbedo &&
               x.glossyAlbedo == y.glossyAlbedo && x.glossyExponent == y.glossyExponent &&
               x.emission == y.emission && x.twoSided == y.twoSided;
    };
    auto primEq = [](const Primitive &x, const Primitive &y) {
        return x.kind == y.kind && x.center == y.center && x.radius == y.radius && x.p0 == y.p0 &&
               x.e1 == y.e1 && x.e2 == y.e2 && x.material == y.material;
    };
    if (a.materials.size() != b.materials.size() || a.primitives.size() != b.primitives.size())
        return false;
    for (size_t i = 0; i < a.materials.size(); ++i)
        if (!matEq(a.materials[i], b.materials[i]))
            return false;
    for (size_t i = 0; i < a.primitives.size(); ++i)
        if (!primEq(a.primitives[i], b.primitives[i]))
            return false;
    return a.camera.origin == b.camera.origin && a.camera.lookAt == b.camera.lookAt &&
           a.camera.up == b.camera.up && a.camera.verticalFov == b.camera.verticalFov &&
           a.camera.width == b.camera.width && a.camera.height == b.camera.height &&
           a.hasEnvironment == b.hasEnvironment && a.environment == b.environment &&
           a.allowNoEmitters == b.allowNoEmitters;
}

} // namespace pstf
