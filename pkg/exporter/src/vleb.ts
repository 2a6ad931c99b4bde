/**
 * VLEB bundle writer/reader.
 *
 * Layout (little-endian): magic "VLEB", u16 version = 1, u32 n_patches,
 * u32 dim, n_patches x (u32 row, u32 col), n_patches * dim float32 values
 * row-major, then an optional single trailing label byte. The slide id is
 * carried by the filename stem, not the file body.
 */
import { randomBytes } from 'node:crypto'
import { renameSync, writeFileSync, readFileSync, rmSync } from 'node:fs'
import { dirname, join } from 'node:path'

export const VLEB_MAGIC = 'VLEB'
export const VLEB_VERSION = 1

export interface Bundle {
  coords: Array<[number, number]>
  /** Row-major (n_patches x dim) values. */
  values: Float32Array
  dim: number
  label?: number
}

export function encodeVleb(bundle: Bundle): Buffer {
  const n = bundle.coords.length
  if (n < 1) throw new Error('bundle must contain at least one patch')
  if (bundle.values.length !== n * bundle.dim) {
    throw new Error(
      `value count ${bundle.values.length} != n_patches ${n} * dim ${bundle.dim}`,
    )
  }
  const seen = new Set<string>()
  for (const [r, c] of bundle.coords) {
    if (!Number.isInteger(r) || !Number.isInteger(c) || r < 0 || c < 0) {
      throw new Error(`coordinates must be non-negative integers, got (${r}, ${c})`)
    }
    const key = `${r},${c}`
    if (seen.has(key)) throw new Error(`duplicate patch coordinate (${r}, ${c})`)
    seen.add(key)
  }
  for (const x of bundle.values) {
    if (!Number.isFinite(x)) throw new Error('embedding values must be finite')
  }

  const hasLabel = bundle.label !== undefined
  if (hasLabel && (!Number.isInteger(bundle.label) || bundle.label! < 0 || bundle.label! > 255)) {
    throw new Error(`label must be an integer in [0, 255], got ${bundle.label}`)
  }
  const size = 4 + 2 + 4 + 4 + n * 8 + n * bundle.dim * 4 + (hasLabel ? 1 : 0)
  const buf = Buffer.alloc(size)
  let off = buf.write(VLEB_MAGIC, 0, 'ascii')
  off = buf.writeUInt16LE(VLEB_VERSION, off)
  off = buf.writeUInt32LE(n, off)
  off = buf.writeUInt32LE(bundle.dim, off)
  for (const [r, c] of bundle.coords) {
    off = buf.writeUInt32LE(r, off)
    off = buf.writeUInt32LE(c, off)
  }
  for (const x of bundle.values) off = buf.writeFloatLE(x, off)
  if (hasLabel) buf.writeUInt8(bundle.label!, off)
  return buf
}

export function decodeVleb(buf: Buffer): Bundle {
  if (buf.subarray(0, 4).toString('ascii') !== VLEB_MAGIC) {
    throw new Error('bad magic: not a VLEB file')
  }
  const version = buf.readUInt16LE(4)
  if (version !== VLEB_VERSION) throw new Error(`unsupported VLEB version ${version}`)
  const n = buf.readUInt32LE(6)
  const dim = buf.readUInt32LE(10)
  let off = 14
  const coords: Array<[number, number]> = []
  for (let i = 0; i < n; i++) {
    coords.push([buf.readUInt32LE(off), buf.readUInt32LE(off + 4)])
    off += 8
  }
  const values = new Float32Array(n * dim)
  for (let i = 0; i < values.length; i++) {
    values[i] = buf.readFloatLE(off)
    off += 4
  }
  const rest = buf.length - off
  if (rest === 1) return { coords, values, dim, label: buf.readUInt8(off) }
  if (rest !== 0) throw new Error(`trailing ${rest} bytes after VLEB payload`)
  return { coords, values, dim }
}

/** Write bytes via a temp file in the target directory, then rename. */
export function writeFileAtomic(path: string, data: Buffer | string): void {
  const tmp = join(dirname(path), `.${randomBytes(8).toString('hex')}.tmp`)
  try {
    writeFileSync(tmp, data)
    renameSync(tmp, path)
  } catch (err) {
    rmSync(tmp, { force: true })
    throw err
  }
}

export function writeVleb(bundle: Bundle, path: string): void {
  writeFileAtomic(path, encodeVleb(bundle))
}

export function readVleb(path: string): Bundle {
  return decodeVleb(readFileSync(path))
}
