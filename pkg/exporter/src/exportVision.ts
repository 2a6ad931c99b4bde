/**
 * Vision export: run an encoder over a directory of pre-tiled patch images
 * named `r{row}_c{col}.<ext>` and write one VLEB bundle with a row per patch.
 */
import { readFileSync, readdirSync } from 'node:fs'
import { basename, join } from 'node:path'

import { Encoder } from './encoder.js'
import { Bundle, writeVleb } from './vleb.js'

const PATCH_NAME = /^r(\d+)_c(\d+)$/

const IMAGE_SIGNATURES: Array<{ ext: RegExp; magic: Buffer }> = [
  { ext: /\.png$/i, magic: Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]) },
  { ext: /\.jpe?g$/i, magic: Buffer.from([0xff, 0xd8, 0xff]) },
]

export interface PatchFile {
  row: number
  col: number
  path: string
}

/** List patch files in coordinate order; non-matching names are ignored. */
export function listPatches(dir: string): PatchFile[] {
  const patches: PatchFile[] = []
  for (const name of readdirSync(dir)) {
    const stem = name.replace(/\.[^.]*$/, '')
    const m = PATCH_NAME.exec(stem)
    if (!m) continue
    patches.push({ row: parseInt(m[1], 10), col: parseInt(m[2], 10), path: join(dir, name) })
  }
  patches.sort((a, b) => a.row - b.row || a.col - b.col)
  return patches
}

function checkImageBytes(path: string, bytes: Buffer): void {
  for (const { ext, magic } of IMAGE_SIGNATURES) {
    if (!ext.test(path)) continue
    if (bytes.length < magic.length || !bytes.subarray(0, magic.length).equals(magic)) {
      throw new Error('corrupt image: signature mismatch')
    }
    return
  }
  // unknown extensions are passed to the encoder as-is
}

export interface VisionExportResult {
  nPatches: number
  dim: number
  errors: Array<{ file: string; message: string }>
}

export function exportVision(
  patchDir: string,
  encoder: Encoder,
  outPath: string,
  label?: number,
): VisionExportResult {
  const patches = listPatches(patchDir)
  if (patches.length === 0) {
    throw new Error(`no r{row}_c{col} patch files found in ${patchDir}`)
  }
  const errors: Array<{ file: string; message: string }> = []
  const coords: Array<[number, number]> = []
  const rows: Float64Array[] = []
  for (const patch of patches) {
    try {
      const bytes = readFileSync(patch.path)
      checkImageBytes(patch.path, bytes)
      rows.push(encoder.encodeImage(bytes))
      coords.push([patch.row, patch.col])
    } catch (err) {
      errors.push({ file: basename(patch.path), message: (err as Error).message })
    }
  }
  if (errors.length > 0) return { nPatches: 0, dim: encoder.dim, errors }

  const values = new Float32Array(rows.length * encoder.dim)
  rows.forEach((row, i) => values.set(Float32Array.from(row), i * encoder.dim))
  const bundle: Bundle = { coords, values, dim: encoder.dim, label }
  writeVleb(bundle, outPath)
  return { nPatches: rows.length, dim: encoder.dim, errors }
}
