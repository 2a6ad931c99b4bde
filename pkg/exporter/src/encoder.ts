/**
 * Encoder abstraction for the export pipeline.
 *
 * Real deployments plug a vision-language model in behind this interface.
 * The built-in stub derives embeddings from SHA-256 so the exporter is fully
 * testable without model weights, and its text side reproduces the consumer
 * library's hash encoder bit-for-bit: seed = sha256(utf8(prompt)); block b
 * contributes 8 lanes, each a big-endian u32 of sha256(seed || u32_be(b))
 * mapped to 2*u/2^32 - 1; the first `dim` lanes are L2-normalized.
 */
import { createHash } from 'node:crypto'

export interface Encoder {
  readonly modelId: string
  readonly dim: number
  /** Embed raw image bytes into a `dim`-vector. */
  encodeImage(bytes: Buffer): Float64Array
  /** Embed a text prompt into a unit-norm `dim`-vector. */
  encodeText(prompt: string): Float64Array
}

function sha256(data: Buffer): Buffer {
  return createHash('sha256').update(data).digest()
}

/** Expand a 32-byte seed into n floats in [-1, 1) via counter-mode hashing. */
export function expandSeed(seed: Buffer, n: number): Float64Array {
  const out = new Float64Array(n)
  let i = 0
  let block = 0
  while (i < n) {
    const counter = Buffer.alloc(4)
    counter.writeUInt32BE(block, 0)
    const digest = sha256(Buffer.concat([seed, counter]))
    for (let lane = 0; lane < 8 && i < n; lane++) {
      const u = digest.readUInt32BE(lane * 4)
      out[i++] = 2.0 * (u / 4294967296.0) - 1.0
    }
    block++
  }
  return out
}

/** Floats in [-1, 1) from a text prompt; matches the consumer's construction. */
export function hashFloats(text: string, n: number): Float64Array {
  return expandSeed(sha256(Buffer.from(text, 'utf-8')), n)
}

export function l2Normalize(v: Float64Array): Float64Array {
  let sq = 0
  for (const x of v) sq += x * x
  const norm = Math.sqrt(sq)
  if (!(norm > 0) || !Number.isFinite(norm)) {
    throw new Error('cannot normalize a zero or non-finite vector')
  }
  const out = new Float64Array(v.length)
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm
  return out
}

export class StubEncoder implements Encoder {
  readonly modelId: string
  readonly dim: number

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim <= 0) {
      throw new Error(`encoder dim must be a positive integer, got ${dim}`)
    }
    this.modelId = `stub:${dim}`
    this.dim = dim
  }

  encodeImage(bytes: Buffer): Float64Array {
    return expandSeed(sha256(bytes), this.dim)
  }

  encodeText(prompt: string): Float64Array {
    return l2Normalize(hashFloats(prompt, this.dim))
  }
}

/**
 * Resolve a model identifier to an encoder. Only the deterministic stub
 * (`stub:<dim>`) ships here; other identifiers are reported as load failures
 * so callers see a clean error rather than a silent fallback.
 */
export function loadModel(modelId: string): Encoder {
  const m = /^stub:(\d+)$/.exec(modelId)
  if (m) return new StubEncoder(parseInt(m[1], 10))
  throw new Error(`model load failure: unknown model id '${modelId}' (expected stub:<dim>)`)
}
