/* Reference tool built on libjpeg: prints the same text format as
 * `mrag jpeg-dump`, raw RGB / YCbCr samples decoded with the float IDCT, or
 * encodes raw RGB from stdin as 4:4:4 baseline with restart markers. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <jpeglib.h>

static int encode(int width, int height, int quality, int restart) {
  struct jpeg_compress_struct cinfo;
  struct jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, stdout);
  cinfo.image_width = width;
  cinfo.image_height = height;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  for (int c = 0; c < 3; c++) cinfo.comp_info[c].h_samp_factor = cinfo.comp_info[c].v_samp_factor = 1;
  cinfo.restart_interval = restart;
  jpeg_start_compress(&cinfo, TRUE);
  JSAMPLE *row = malloc(width * 3);
  while (cinfo.next_scanline < cinfo.image_height) {
    if (fread(row, 1, width * 3, stdin) != (size_t)(width * 3)) return 1;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  free(row);
  return 0;
}

int main(int argc, char **argv) {
  if (argc == 6 && strcmp(argv[1], "encode") == 0)
    return encode(atoi(argv[2]), atoi(argv[3]), atoi(argv[4]), atoi(argv[5]));
  if (argc < 3) {
    fprintf(stderr, "usage: jpeg_ref coef|pixels|ycc FILE | encode W H QUALITY RESTART\n");
    return 2;
  }
  FILE *f = fopen(argv[2], "rb");
  if (!f) return 1;
  struct jpeg_decompress_struct cinfo;
  struct jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);

  if (strcmp(argv[1], "coef") == 0) {
    jvirt_barray_ptr *arrays = jpeg_read_coefficients(&cinfo);
    printf("jpeg %u %u\n", cinfo.image_width, cinfo.image_height);
    for (int c = 0; c < cinfo.num_components; c++) {
      JQUANT_TBL *q = cinfo.comp_info[c].quant_table;
      printf("qtable %d", c);
      for (int k = 0; k < 64; k++) printf(" %u", q->quantval[k]);
      printf("\n");
    }
    for (int c = 0; c < cinfo.num_components; c++) {
      jpeg_component_info *ci = &cinfo.comp_info[c];
      for (JDIMENSION by = 0; by < ci->height_in_blocks; by++) {
        JBLOCKARRAY rows = (*cinfo.mem->access_virt_barray)(
            (j_common_ptr)&cinfo, arrays[c], by, 1, FALSE);
        for (JDIMENSION bx = 0; bx < ci->width_in_blocks; bx++) {
          printf("block %d %u %u", c, by, bx);
          for (int k = 0; k < 64; k++) printf(" %d", rows[0][bx][k]);
          printf("\n");
        }
      }
    }
  } else {
    cinfo.dct_method = JDCT_FLOAT;
    cinfo.out_color_space = strcmp(argv[1], "ycc") == 0 ? JCS_YCbCr : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    int stride = cinfo.output_width * cinfo.output_components;
    JSAMPLE *row = malloc(stride);
    while (cinfo.output_scanline < cinfo.output_height) {
      jpeg_read_scanlines(&cinfo, &row, 1);
      fwrite(row, 1, stride, stdout);
    }
    free(row);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  fclose(f);
  return 0;
}
